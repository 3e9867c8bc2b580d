//! JSON scenarios: parsing with located errors, validation, execution and
//! run manifests.
//!
//! A run writes into one output directory:
//! - `diagnostics.csv` (simulate, decay_study), `fit.json` (decay_study)
//! - `resolvent.csv`, `probe.json` (probe)
//! - `harmonic.csv`, `harmonic.json` (harmonic)
//! - `snapshot.bin` + `snapshot.json` when `output.snapshot` is set
//! - `manifest.json`: the scenario, its hash, thread count, seed and the
//!   sha256 of every artifact. Feeding a manifest back as the scenario file
//!   repeats the run.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diagnostics::{fit_decay, DecayFit, DecayModel};
use crate::error::{Error, Result};
use crate::fdtd::{init_rho, march, BoundaryForcing, HarmonicForcing, Model, NoForcing, PulseForcing, State, Stepper};
use crate::harmonic::{boundary_values, convergence_test, harmonic_solution, FaceData};
use crate::medium::{sample_medium_at, BoundsReport, MediumSpec};
use crate::mesh::{BoundaryTags, Constants, FaceKind, Grid, Mesh};
use crate::spectral::{quasimode_witness, resolvent_curve, spectrum_near_axis, ModeClass, Projector, Quasimode, SlabOperator};

pub const MANIFEST_FORMAT: &str = "magplasma-manifest/1";
pub const SNAPSHOT_FORMAT: &str = "magplasma-snapshot/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    #[serde(alias = "decay-study")]
    DecayStudy,
    Probe,
    Harmonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridSpec {
    Box { extents: [f64; 3], cells: [usize; 3] },
    /// 1-D slab along `x`.
    Slab { length: f64, cells: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundarySpec {
    pub x_lo: FaceKind,
    pub x_hi: FaceKind,
    pub y_lo: FaceKind,
    pub y_hi: FaceKind,
    pub z_lo: FaceKind,
    pub z_hi: FaceKind,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        let p = FaceKind::Pec;
        BoundarySpec { x_lo: p, x_hi: p, y_lo: p, y_hi: p, z_lo: p, z_hi: p }
    }
}

impl BoundarySpec {
    pub fn tags(&self) -> BoundaryTags {
        BoundaryTags([self.x_lo, self.x_hi, self.y_lo, self.y_hi, self.z_lo, self.z_hi])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSpec {
    /// Explicit step; overrides `cfl_fraction`.
    pub dt: Option<f64>,
    pub cfl_fraction: f64,
    pub t_end: f64,
}

impl Default for TimeSpec {
    fn default() -> Self {
        TimeSpec { dt: None, cfl_fraction: 0.9, t_end: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Zero,
    /// PEC cavity field `E_a = p_a amplitude * cos(k_a x_a) prod_{b != a} sin(k_b x_b)`
    /// with `k = pi * indices / extents`; on the slab only `x` varies.
    CavityMode {
        indices: [usize; 3],
        polarization: [f64; 3],
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// `E = polarization * exp(-|x - center|^2 / width^2)`.
    GaussianPulse { center: [f64; 3], width: f64, polarization: [f64; 3] },
    /// Seeded uniform noise in `J` and `E`; `B` is the curl of a noisy
    /// potential so that it starts divergence free.
    Random {
        #[serde(default = "one")]
        amplitude: f64,
    },
    /// Path to a snapshot sidecar (`.json`), relative to the working directory.
    Snapshot { path: String },
}

impl Default for InitialSpec {
    fn default() -> Self {
        InitialSpec::Zero
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcingSpec {
    None,
    /// `g(t) = Re[g_hat e^{-i omega t}]` with `g_hat` given per face.
    Harmonic { omega: f64, faces: Vec<FaceData> },
    /// `Re[g_face] exp(-((t - t0)/width)^2) sin(omega t)`.
    Pulse { omega: f64, t0: f64, width: f64, faces: Vec<FaceData> },
}

impl Default for ForcingSpec {
    fn default() -> Self {
        ForcingSpec::None
    }
}

impl ForcingSpec {
    fn faces(&self) -> &[FaceData] {
        match self {
            ForcingSpec::None => &[],
            ForcingSpec::Harmonic { faces, .. } | ForcingSpec::Pulse { faces, .. } => faces,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    /// Steps between diagnostic rows.
    pub cadence: usize,
    /// Dump the final state.
    pub snapshot: bool,
    /// Output directory when none is given on the command line.
    pub dir: Option<String>,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec { cadence: 10, snapshot: false, dir: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_count: usize,
    /// Also sample at the imaginary parts of eigenvalues inside the range.
    pub refine_at_eigenvalues: bool,
    pub projector: Option<Projector>,
    /// Kernel tolerance relative to `|A_h|`.
    pub re_tol: f64,
    pub im_window: Option<f64>,
    pub quasimodes: usize,
    /// Window for the envelope slope; defaults to `[beta_max/10, beta_max]`.
    pub tail: Option<(f64, f64)>,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        ProbeSpec {
            beta_min: 0.0,
            beta_max: 50.0,
            beta_count: 201,
            refine_at_eigenvalues: true,
            projector: None,
            re_tol: 1e-10,
            im_window: None,
            quasimodes: 3,
            tail: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecaySpec {
    /// Polynomial for decay studies and exponential for harmonic runs unless set.
    pub model: Option<DecayModel>,
    pub window: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub mode: Mode,
    pub grid: GridSpec,
    pub medium: MediumSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    #[serde(default)]
    pub time: TimeSpec,
    #[serde(default)]
    pub initial: InitialSpec,
    #[serde(default)]
    pub forcing: ForcingSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub constants: Constants,
    /// Track charge densities for the Gauss residual.
    #[serde(default)]
    pub track_rho: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub probe: ProbeSpec,
    #[serde(default)]
    pub decay: DecaySpec,
}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut s = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => s.push_str(&format!("/{index}")),
            Segment::Map { key } => s.push_str(&format!("/{}", key.replace('~', "~0").replace('/', "~1"))),
            Segment::Enum { variant } => s.push_str(&format!("/{variant}")),
            Segment::Unknown => s.push_str("/?"),
        }
    }
    if s.is_empty() {
        "/".into()
    } else {
        s
    }
}

fn from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| Error::Parse { pointer: pointer(e.path()), message: e.inner().to_string() })
}

/// Parse and validate a scenario document.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let s: Scenario = from_json(text)?;
    s.validate()?;
    Ok(s)
}

/// What a scenario file turned out to be.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub scenario: Scenario,
    /// Present when the file was a manifest of an earlier run.
    pub threads: Option<usize>,
}

/// Read a scenario or a manifest from disk.
pub fn load(path: &Path) -> Result<Loaded> {
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value = serde_json::from_str(&text)?;
    if v.get("format").and_then(|f| f.as_str()) == Some(MANIFEST_FORMAT) {
        let m: Manifest = from_json(&text)?;
        m.scenario.validate()?;
        Ok(Loaded { scenario: m.scenario, threads: Some(m.threads) })
    } else {
        Ok(Loaded { scenario: parse_scenario(&text)?, threads: None })
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must be positive and finite, got {x}")))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub dim: usize,
    pub dt: f64,
    pub dt_max: f64,
    pub n_steps: usize,
    pub boundary_entries: usize,
    pub bounds: BoundsReport,
}

impl Scenario {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("scenario serializes")))
    }

    pub fn mesh(&self) -> Result<Mesh> {
        positive("constants.c", self.constants.c)?;
        positive("constants.eps0", self.constants.eps0)?;
        Ok(match self.grid {
            GridSpec::Box { extents, cells } => {
                for a in 0..3 {
                    positive("grid.extents", extents[a])?;
                    if cells[a] == 0 {
                        return Err(Error::Validation("grid.cells must be at least 1".into()));
                    }
                }
                Mesh::box3(extents, cells, self.boundary.tags(), self.constants)
            }
            GridSpec::Slab { length, cells } => {
                positive("grid.length", length)?;
                if cells < 4 {
                    return Err(Error::Validation(format!("a slab needs at least 4 cells, got {cells}")));
                }
                let b = self.boundary;
                if [b.y_lo, b.y_hi, b.z_lo, b.z_hi].contains(&FaceKind::SilverMuller) {
                    return Err(Error::Validation("a slab only has x faces; y and z faces must stay pec".into()));
                }
                Mesh::slab(length, cells, b.x_lo, b.x_hi, self.constants)
            }
        })
    }

    pub fn model(&self) -> Result<Model> {
        let mesh = self.mesh()?;
        let medium = sample_medium_at(&self.medium, &mesh.site_pos)?;
        Model::new(mesh, medium)
    }

    pub fn dt(&self, mesh: &Mesh) -> Result<f64> {
        let dt_max = mesh.cfl_max_dt();
        match self.time.dt {
            Some(dt) => {
                positive("time.dt", dt)?;
                if dt > dt_max {
                    return Err(Error::Validation(format!("time.dt = {dt:e} exceeds the CFL bound {dt_max:e}")));
                }
                Ok(dt)
            }
            None => {
                let f = self.time.cfl_fraction;
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::Validation(format!("time.cfl_fraction must lie in (0, 1], got {f}")));
                }
                Ok(f * dt_max)
            }
        }
    }

    pub fn n_steps(&self, dt: f64) -> usize {
        (self.time.t_end / dt - 1e-9).ceil().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.summary().map(|_| ())
    }

    /// Full validation, reporting the resolved sizes and medium bounds.
    pub fn summary(&self) -> Result<ValidationSummary> {
        let model = self.model()?;
        let mesh = &model.mesh;
        let bounds = model.medium.bounds.clone();
        if !bounds.hyp1_ok {
            let v = &bounds.violations.iter().find(|v| v.kind != crate::medium::ViolationKind::ZeroNu).expect("violation recorded");
            return Err(Error::Validation(format!(
                "medium: species {} at sample {} violates {:?} (need omega_p > 0 and nu >= 0)",
                v.species + 1,
                v.site,
                v.kind
            )));
        }
        if matches!(self.mode, Mode::DecayStudy | Mode::Harmonic) && !bounds.hyp2_ok {
            return Err(Error::Validation(format!(
                "{:?} requires the collision frequency of every species to be bounded below by a strictly positive constant; \
                 the sampled minimum is nu = {}",
                self.mode, bounds.nu_lower
            )));
        }
        positive("time.t_end", self.time.t_end)?;
        if self.output.cadence == 0 {
            return Err(Error::Validation("output.cadence must be at least 1".into()));
        }
        let dt = self.dt(mesh)?;
        let faces = self.forcing.faces();
        let g = boundary_values(mesh, faces)?;
        match &self.forcing {
            ForcingSpec::None => {}
            ForcingSpec::Harmonic { omega, .. } => {
                if !(omega.is_finite() && *omega >= 0.0) {
                    return Err(Error::Validation(format!("forcing.omega must be finite and nonnegative, got {omega}")));
                }
            }
            ForcingSpec::Pulse { omega, t0, width, .. } => {
                positive("forcing.width", *width)?;
                if !(omega.is_finite() && t0.is_finite()) {
                    return Err(Error::Validation("forcing.omega and forcing.t0 must be finite".into()));
                }
            }
        }
        match self.mode {
            Mode::Harmonic => {
                if !matches!(self.forcing, ForcingSpec::Harmonic { .. }) {
                    return Err(Error::Validation("harmonic mode needs a harmonic forcing".into()));
                }
                if !mesh.has_silver_muller() {
                    return Err(Error::Validation("harmonic mode needs at least one silver_muller face".into()));
                }
            }
            Mode::Probe => {
                if !mesh.is_slab() {
                    return Err(Error::Validation("probe runs on a slab grid".into()));
                }
                let p = &self.probe;
                if !(p.beta_min >= 0.0 && p.beta_max > p.beta_min && p.beta_max.is_finite()) || p.beta_count < 2 {
                    return Err(Error::Validation("probe needs 0 <= beta_min < beta_max and beta_count >= 2".into()));
                }
                positive("probe.re_tol", p.re_tol)?;
            }
            _ => {}
        }
        if let Some((a, b)) = self.decay.window {
            if !(b > a) {
                return Err(Error::Validation(format!("decay.window [{a}, {b}] is empty")));
            }
        }
        if let InitialSpec::GaussianPulse { width, .. } = self.initial {
            positive("initial.width", width)?;
        }
        Ok(ValidationSummary {
            dim: model.dim(),
            dt,
            dt_max: mesh.cfl_max_dt(),
            n_steps: self.n_steps(dt),
            boundary_entries: g.len(),
            bounds,
        })
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Initial state from its spec (without the harmonic reference).
pub fn initial_state(model: &Model, spec: &InitialSpec, seed: u64) -> Result<State<f64>> {
    let mesh = &model.mesh;
    let mut u = State::zeros(model);
    match spec {
        InitialSpec::Zero => {}
        InitialSpec::CavityMode { indices, polarization, amplitude } => {
            let ext = mesh.grid.extents;
            let k: Vec<f64> = (0..3).map(|a| std::f64::consts::PI * indices[a] as f64 / ext[a]).collect();
            let dims = if mesh.is_slab() { 1 } else { 3 };
            for e in 0..mesh.n_edges {
                let a = mesh.edge_axis[e];
                let p = mesh.edge_pos[e];
                let mut v = amplitude * polarization[a];
                for b in 0..dims {
                    v *= if b == a { (k[b] * p[b]).cos() } else { (k[b] * p[b]).sin() };
                }
                u.e[e] = v;
            }
        }
        InitialSpec::GaussianPulse { center, width, polarization } => {
            for e in 0..mesh.n_edges {
                let p = mesh.edge_pos[e];
                let r2: f64 = (0..3).map(|a| (p[a] - center[a]).powi(2)).sum();
                u.e[e] = polarization[mesh.edge_axis[e]] * (-r2 / (width * width)).exp();
            }
        }
        InitialSpec::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| amplitude * rng.gen_range(-1.0..1.0)).collect() };
            for j in u.j.iter_mut() {
                *j = draw(j.len());
            }
            u.e = draw(mesh.n_edges);
            let mut a = draw(mesh.n_edges);
            for (x, free) in a.iter_mut().zip(&mesh.edge_free) {
                if !free {
                    *x = 0.0;
                }
            }
            let h = mesh.grid.min_spacing();
            u.b = mesh.curl_e(&a).iter().map(|x| x * h).collect();
        }
        InitialSpec::Snapshot { path } => {
            u = read_snapshot(Path::new(path), model)?;
        }
    }
    model.apply_pec(&mut u);
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotBlock {
    pub name: String,
    /// `sites`, `edges` or `faces`.
    pub location: String,
    pub components: usize,
    pub count: usize,
    pub offset_bytes: usize,
}

/// Sidecar header of a snapshot. The data file is a flat little-endian
/// f64 array holding the blocks in order: `J_1 .. J_S` (site-major,
/// three components per site), then `E` (one value per edge), then `B`
/// (one value per face).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub format: String,
    pub dtype: String,
    pub data: String,
    pub t: f64,
    pub grid: Grid,
    pub blocks: Vec<SnapshotBlock>,
}

pub fn write_snapshot(dir: &Path, stem: &str, model: &Model, u: &State<f64>) -> Result<PathBuf> {
    let data = format!("{stem}.bin");
    let mut blocks = Vec::new();
    let mut w = BufWriter::new(fs::File::create(dir.join(&data))?);
    let mut offset = 0;
    let mut put = |name: String, location: &str, components: usize, v: &[f64], w: &mut BufWriter<fs::File>| -> Result<()> {
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
        blocks.push(SnapshotBlock { name, location: location.into(), components, count: v.len() / components, offset_bytes: offset });
        offset += 8 * v.len();
        Ok(())
    };
    for (s, j) in u.j.iter().enumerate() {
        put(format!("J{}", s + 1), "sites", 3, j, &mut w)?;
    }
    put("E".into(), "edges", 1, &u.e, &mut w)?;
    put("B".into(), "faces", 1, &u.b, &mut w)?;
    w.flush()?;
    let header = SnapshotHeader { format: SNAPSHOT_FORMAT.into(), dtype: "<f8".into(), data, t: u.t, grid: model.mesh.grid, blocks };
    let path = dir.join(format!("{stem}.json"));
    fs::write(&path, serde_json::to_string_pretty(&header)?)?;
    Ok(path)
}

pub fn read_snapshot(sidecar: &Path, model: &Model) -> Result<State<f64>> {
    let header: SnapshotHeader = from_json(&fs::read_to_string(sidecar)?)?;
    if header.format != SNAPSHOT_FORMAT || header.dtype != "<f8" {
        return Err(Error::Validation(format!("unsupported snapshot {} / {}", header.format, header.dtype)));
    }
    if header.grid != model.mesh.grid {
        return Err(Error::ShapeMismatch("snapshot grid differs from the scenario grid".into()));
    }
    let bytes = fs::read(sidecar.parent().unwrap_or(Path::new(".")).join(&header.data))?;
    let block = |name: &str| -> Result<Vec<f64>> {
        let b = header.blocks.iter().find(|b| b.name == name).ok_or_else(|| Error::ShapeMismatch(format!("snapshot has no block {name}")))?;
        let n = b.count * b.components;
        let raw = bytes
            .get(b.offset_bytes..b.offset_bytes + 8 * n)
            .ok_or_else(|| Error::ShapeMismatch(format!("snapshot block {name} is truncated")))?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let mut u = State::zeros(model);
    u.t = header.t;
    for s in 0..model.n_species() {
        u.j[s] = block(&format!("J{}", s + 1))?;
    }
    u.e = block("E")?;
    u.b = block("B")?;
    u.check_shape(model)?;
    Ok(u)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub threads: usize,
    pub seed: u64,
    pub wall_time_s: f64,
    pub outputs: Vec<OutputFile>,
    pub scenario: Scenario,
}

#[derive(Clone, Debug, Serialize)]
struct ProbeSummary {
    dim: usize,
    norm: f64,
    min_re: f64,
    abscissa: f64,
    kernel_modes: usize,
    damped: usize,
    suspicious: usize,
    imaginary_pairs: usize,
    tail_window: (f64, f64),
    tail_slope: Option<f64>,
    sup: f64,
    median: f64,
    quasimodes: Vec<Quasimode>,
}

#[derive(Clone, Debug, Serialize)]
struct HarmonicSummary {
    omega: f64,
    solve_iterations: usize,
    solve_residual: f64,
    reference_norm: f64,
    initial_mismatch: f64,
    fit: Option<DecayFit>,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?)?;
    Ok(())
}

fn csv_file(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Run a validated scenario, writing artifacts and `manifest.json` into `out`.
pub fn execute(scenario: &Scenario, out: &Path, threads: usize) -> Result<Manifest> {
    scenario.validate()?;
    let threads = threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    fs::create_dir_all(out)?;
    let clock = Instant::now();
    let files = pool.install(|| run(scenario, out))?;
    let wall_time_s = clock.elapsed().as_secs_f64();
    let mut outputs = Vec::new();
    for f in files {
        let bytes = fs::read(out.join(&f))?;
        outputs.push(OutputFile { path: f, sha256: hex(&Sha256::digest(&bytes)) });
    }
    let manifest = Manifest {
        format: MANIFEST_FORMAT.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: scenario.hash(),
        threads,
        seed: scenario.seed,
        wall_time_s,
        outputs,
        scenario: scenario.clone(),
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn run(sc: &Scenario, out: &Path) -> Result<Vec<String>> {
    let model = sc.model()?;
    let mesh = &model.mesh;
    let dt = sc.dt(mesh)?;
    let n_steps = sc.n_steps(dt);
    let cadence = sc.output.cadence;
    let g = boundary_values(mesh, sc.forcing.faces())?;
    let mut files = Vec::new();
    let mut u = initial_state(&model, &sc.initial, sc.seed)?;
    if sc.track_rho {
        init_rho(&model, &mut u);
    }
    match sc.mode {
        Mode::Simulate | Mode::DecayStudy => {
            let forcing: Box<dyn BoundaryForcing> = match &sc.forcing {
                ForcingSpec::None => Box::new(NoForcing),
                ForcingSpec::Harmonic { omega, .. } => Box::new(HarmonicForcing { omega: *omega, g_hat: g.clone() }),
                ForcingSpec::Pulse { omega, t0, width, .. } => {
                    Box::new(PulseForcing { amplitude: g.iter().map(|z| z.re).collect(), omega: *omega, t0: *t0, width: *width })
                }
            };
            let stepper = Stepper::new(&model, dt)?;
            let trace = march(&stepper, &mut u, forcing.as_ref(), n_steps, cadence, &mut |_| {})?;
            trace.write_csv(csv_file(&out.join("diagnostics.csv"))?)?;
            files.push("diagnostics.csv".to_string());
            if sc.mode == Mode::DecayStudy {
                let fit = fit_decay(&trace.norm_series(), sc.decay.model.unwrap_or(DecayModel::Poly), sc.decay.window)?;
                write_json(&out.join("fit.json"), &fit)?;
                files.push("fit.json".into());
            }
        }
        Mode::Harmonic => {
            let ForcingSpec::Harmonic { omega, .. } = sc.forcing else { unreachable!("validated") };
            let sol = harmonic_solution(&model, omega, &g, None)?;
            let mut u0 = sol.at(u.t).axpy(1.0, &u);
            u0.rho = u.rho.take();
            let stepper = Stepper::new(&model, dt)?;
            let fit = Some((sc.decay.model.unwrap_or(DecayModel::Exp), sc.decay.window));
            let runr = convergence_test(&stepper, &sol, u0, n_steps, cadence, fit)?;
            runr.write_csv(csv_file(&out.join("harmonic.csv"))?)?;
            let summary = HarmonicSummary {
                omega,
                solve_iterations: sol.report.iterations,
                solve_residual: sol.residual,
                reference_norm: runr.reference_norm,
                initial_mismatch: runr.initial_mismatch,
                fit: runr.fit,
            };
            write_json(&out.join("harmonic.json"), &summary)?;
            files.push("harmonic.csv".into());
            files.push("harmonic.json".into());
            u = sol.at(u.t);
        }
        Mode::Probe => {
            let p = &sc.probe;
            let op = SlabOperator::new(model.clone())?;
            let norm = op.norm();
            let spectrum = spectrum_near_axis(&op, p.projector, p.re_tol * norm, p.im_window.unwrap_or(f64::INFINITY))?;
            let mut betas: Vec<f64> =
                (0..p.beta_count).map(|k| p.beta_min + (p.beta_max - p.beta_min) * k as f64 / (p.beta_count - 1) as f64).collect();
            if p.refine_at_eigenvalues {
                betas.extend(spectrum.eigenvalues.iter().map(|z| z.im).filter(|b| *b >= p.beta_min && *b <= p.beta_max));
            }
            let curve = resolvent_curve(&op, &betas, p.projector)?;
            let mut w = csv::Writer::from_writer(csv_file(&out.join("resolvent.csv"))?);
            w.write_record(["beta", "sigma_min", "resolvent_norm"])?;
            for k in 0..curve.betas.len() {
                w.write_record([format!("{:e}", curve.betas[k]), format!("{:e}", curve.sigma_min[k]), format!("{:e}", curve.norms[k])])?;
            }
            w.flush()?;
            let tail = p.tail.unwrap_or((p.beta_max / 10.0, p.beta_max));
            let quasimodes = if p.quasimodes > 0 { quasimode_witness(&op, &(0..p.quasimodes).collect::<Vec<_>>())? } else { Vec::new() };
            let summary = ProbeSummary {
                dim: op.dim(),
                norm,
                min_re: spectrum.min_re(),
                abscissa: spectrum.abscissa(),
                kernel_modes: spectrum.count(ModeClass::KernelMode),
                damped: spectrum.count(ModeClass::Damped),
                suspicious: spectrum.count(ModeClass::Suspicious),
                imaginary_pairs: spectrum.imaginary_pairs(p.re_tol * norm),
                tail_window: tail,
                tail_slope: curve.envelope_slope(tail.0, tail.1),
                sup: curve.sup_on(p.beta_min, p.beta_max),
                median: curve.median_on(p.beta_min, p.beta_max),
                quasimodes,
            };
            write_json(&out.join("probe.json"), &summary)?;
            files.push("resolvent.csv".into());
            files.push("probe.json".into());
        }
    }
    if sc.output.snapshot && sc.mode != Mode::Probe {
        write_snapshot(out, "snapshot", &model, &u)?;
        files.push("snapshot.bin".into());
        files.push("snapshot.json".into());
    }
    Ok(files)
}

/// Fit a decay law to two columns of an existing CSV.
pub fn fit_csv(path: &Path, t_col: &str, y_col: &str, model: DecayModel, window: Option<(f64, f64)>) -> Result<DecayFit> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Validation(format!("column {name} not found in {}", path.display())))
    };
    let (ti, yi) = (col(t_col)?, col(y_col)?);
    let mut series = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec[i].trim().parse().map_err(|_| Error::Validation(format!("bad number {:?} in column {}", &rec[i], headers[i].to_string())))
        };
        series.push((parse(ti)?, parse(yi)?));
    }
    fit_decay(&series, model, window)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "mode": "simulate",
        "grid": {"kind": "box", "extents": [1, 1, 1], "cells": [4, 4, 4]},
        "medium": {
            "species": [{"omega_p": {"kind": "constant", "value": 1}, "nu": {"kind": "constant", "value": 1}, "charge_sign": -1}],
            "b_ext": [{"kind": "constant", "value": 0}, {"kind": "constant", "value": 0}, {"kind": "constant", "value": 1}]
        }
    }"#;

    #[test]
    fn minimal_document_gets_defaults() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.constants, Constants { eps0: 1.0, c: 1.0 });
        assert_eq!(s.time.cfl_fraction, 0.9);
        assert!(!s.track_rho);
        assert_eq!(s.boundary.tags(), BoundaryTags::all(FaceKind::Pec));
        assert_eq!(s.initial, InitialSpec::Zero);
    }

    #[test]
    fn unknown_key_is_located() {
        let text = MINIMAL.replace("\"cells\": [4, 4, 4]", "\"cells\": [4, 4, 4], \"spacing\": 2");
        match parse_scenario(&text) {
            Err(Error::Parse { pointer, message }) => {
                // fields inside tagged variants are reported at the variant
                assert_eq!(pointer, "/grid");
                assert!(message.contains("spacing"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("\"value\": 1}, \"charge_sign\"", "\"value\": \"fast\"}, \"charge_sign\"");
        match parse_scenario(&text) {
            Err(Error::Parse { pointer, .. }) => assert_eq!(pointer, "/medium/species/0/nu"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dt_above_cfl_is_rejected() {
        let text = MINIMAL.replace("\"mode\": \"simulate\",", "\"mode\": \"simulate\", \"time\": {\"dt\": 0.2, \"t_end\": 1},");
        assert!(matches!(parse_scenario(&text), Err(Error::Validation(m)) if m.contains("CFL")));
    }

    #[test]
    fn decay_study_needs_collisions() {
        let text = MINIMAL.replace("\"simulate\"", "\"decay-study\"").replace("\"value\": 1}, \"charge_sign\"", "\"value\": 0}, \"charge_sign\"");
        assert!(matches!(parse_scenario(&text), Err(Error::Validation(m)) if m.contains("strictly positive")));
        let ok = MINIMAL.replace("\"simulate\"", "\"decay_study\"");
        assert_eq!(parse_scenario(&ok).unwrap().mode, Mode::DecayStudy);
    }

    #[test]
    fn forcing_on_pec_face_is_rejected() {
        let text = MINIMAL.replace(
            "\"mode\": \"simulate\",",
            r#""mode": "simulate", "forcing": {"kind": "harmonic", "omega": 2, "faces": [{"axis": 0, "side": 0, "amplitude": [[0,0],[1,0],[0,0]]}]},"#,
        );
        assert!(matches!(parse_scenario(&text), Err(Error::UnsupportedFace(f)) if f == "x_lo"));
        let wired = text.replace("\"mode\": \"simulate\",", "\"mode\": \"simulate\", \"boundary\": {\"x_lo\": \"silver_muller\"},");
        let s = parse_scenario(&wired).unwrap();
        let m = s.model().unwrap();
        let g = boundary_values(&m.mesh, s.forcing.faces()).unwrap();
        assert_eq!(g.len(), m.mesh.sm.len());
        assert!(g.iter().any(|z| z.norm() > 0.0));
    }

    #[test]
    fn round_trip() {
        let s = parse_scenario(MINIMAL).unwrap();
        assert_eq!(parse_scenario(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn snapshot_round_trip() {
        let s = parse_scenario(MINIMAL).unwrap();
        let m = s.model().unwrap();
        let mut u = initial_state(&m, &InitialSpec::Random { amplitude: 1.0 }, 7).unwrap();
        u.t = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let side = write_snapshot(dir.path(), "state", &m, &u).unwrap();
        let v = read_snapshot(&side, &m).unwrap();
        assert_eq!(v.t, u.t);
        assert_eq!((&v.j, &v.e, &v.b), (&u.j, &u.e, &u.b));
        let bytes = fs::metadata(dir.path().join("state.bin")).unwrap().len() as usize;
        assert_eq!(bytes, 8 * (u.j.iter().map(Vec::len).sum::<usize>() + u.e.len() + u.b.len()));
    }

    #[test]
    fn random_start_is_divergence_free() {
        let s = parse_scenario(MINIMAL).unwrap();
        let m = s.model().unwrap();
        let u = initial_state(&m, &InitialSpec::Random { amplitude: 1.0 }, 3).unwrap();
        let div = m.mesh.div_b.apply(&u.b);
        assert!(div.iter().all(|d| d.abs() < 1e-12));
        assert_eq!(u, initial_state(&m, &InitialSpec::Random { amplitude: 1.0 }, 3).unwrap());
    }
}

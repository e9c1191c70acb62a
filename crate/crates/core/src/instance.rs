//! Problem data, synthetic generators and on-disk formats.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::subset_eval::SupportSet;

/// A subset selection problem: design `x` (n x p) and response `y` (length n).
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    x: DMatrix<f64>,
    y: DVector<f64>,
    name: Option<String>,
}

impl Instance {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, name: Option<String>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::Validation(format!(
                "design matrix must be non-empty, got {}x{}",
                x.nrows(),
                x.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::Validation(format!(
                "response has length {} but the design has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            let (i, j) = (pos % x.nrows(), pos / x.nrows());
            return Err(Error::Validation(format!("x[{i}][{j}] is not finite")));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("y[{i}] is not finite")));
        }
        Ok(Self { x, y, name })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn y_norm_sq(&self) -> f64 {
        self.y.norm_squared()
    }

    pub fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.p() {
            return Err(Error::Parameter(format!(
                "cardinality k = {k} must satisfy 1 <= k <= p = {}",
                self.p()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (n={}, p={})", self.name().unwrap_or("instance"), self.n(), self.p())
    }
}

// ---------------------------------------------------------------------------
// Gaussian planted-support generator

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub n: usize,
    pub p: usize,
    pub k_true: usize,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default = "default_coeff_scale")]
    pub coeff_scale: f64,
    pub seed: u64,
}

fn default_noise() -> f64 {
    0.1
}

fn default_coeff_scale() -> f64 {
    1.0
}

impl GaussianSpec {
    pub fn new(n: usize, p: usize, k_true: usize, seed: u64) -> Self {
        Self {
            n,
            p,
            k_true,
            noise_sigma: default_noise(),
            coeff_scale: default_coeff_scale(),
            seed,
        }
    }

    pub fn noise(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 {
            return Err(Error::Parameter("n and p must be positive".into()));
        }
        if self.k_true == 0 || self.k_true > self.p {
            return Err(Error::Parameter(format!(
                "k_true = {} must lie in 1..={}",
                self.k_true, self.p
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Parameter("noise_sigma must be finite and >= 0".into()));
        }
        if !(self.coeff_scale > 0.0 && self.coeff_scale.is_finite()) {
            return Err(Error::Parameter("coeff_scale must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Draws `X` with i.i.d. standard normal entries, a uniformly random support of size
/// `k_true` carrying coefficients `+-coeff_scale * |N(0,1)|`, and `y = X w + noise`.
pub fn generate_gaussian(spec: &GaussianSpec) -> Result<(Instance, SupportSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = DMatrix::from_fn(spec.n, spec.p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut support: Vec<usize> = index::sample(&mut rng, spec.p, spec.k_true).into_vec();
    support.sort_unstable();
    let mut w = DVector::zeros(spec.p);
    for &j in &support {
        let magnitude: f64 = rng.sample::<f64, _>(StandardNormal).abs();
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        w[j] = sign * spec.coeff_scale * magnitude;
    }
    let mut y = &x * &w;
    if spec.noise_sigma > 0.0 {
        for v in y.iter_mut() {
            *v += spec.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let name = format!(
        "gaussian-n{}-p{}-k{}-s{}",
        spec.n, spec.p, spec.k_true, spec.seed
    );
    let inst = Instance::new(x, y, Some(name))?;
    Ok((inst, SupportSet::new_unchecked(support)))
}

// ---------------------------------------------------------------------------
// Gabor dictionary

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaborSpec {
    /// Patches are `patch_size x patch_size`, so atoms have length `patch_size^2`.
    pub patch_size: usize,
    pub num_atoms: usize,
    /// Orientations in radians.
    pub orientations: Vec<f64>,
    /// Spatial frequencies in cycles per pixel.
    pub frequencies: Vec<f64>,
    /// Standard deviations of the Gaussian envelope, in pixels.
    pub scales: Vec<f64>,
    pub phases: Vec<f64>,
    /// When the grid yields fewer than `num_atoms` distinct atoms, draw extra atoms
    /// with randomly jittered parameters instead of failing.
    #[serde(default)]
    pub allow_jitter: bool,
    pub seed: u64,
}

impl GaborSpec {
    /// Four orientations, phases `0` and `pi/2`, one envelope width and as many
    /// frequencies as needed to reach `num_atoms`.
    pub fn standard(patch_size: usize, num_atoms: usize, seed: u64) -> Self {
        let per_freq = 8;
        let m = num_atoms.div_ceil(per_freq).max(1);
        let frequencies = (0..m).map(|j| 0.5 * (j + 1) as f64 / (m + 1) as f64).collect();
        Self {
            patch_size,
            num_atoms,
            orientations: (0..4).map(|i| i as f64 * PI / 4.0).collect(),
            frequencies,
            scales: vec![patch_size as f64 / 3.0],
            phases: vec![0.0, PI / 2.0],
            allow_jitter: true,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.num_atoms == 0 {
            return Err(Error::Parameter("patch_size and num_atoms must be positive".into()));
        }
        if self.orientations.is_empty()
            || self.frequencies.is_empty()
            || self.scales.is_empty()
            || self.phases.is_empty()
        {
            return Err(Error::Parameter("every Gabor parameter grid needs at least one value".into()));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.orientations) || !finite(&self.frequencies) || !finite(&self.phases) {
            return Err(Error::Parameter("Gabor grids must be finite".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("Gabor envelope scales must be positive".into()));
        }
        Ok(())
    }
}

/// One unit-norm atom, row-major over the `r x r` grid. `None` if it vanishes.
pub fn gabor_atom(r: usize, orientation: f64, frequency: f64, scale: f64, phase: f64) -> Option<DVector<f64>> {
    let c = (r as f64 - 1.0) / 2.0;
    let (s, co) = orientation.sin_cos();
    let mut atom = DVector::from_fn(r * r, |idx, _| {
        let (i, j) = (idx / r, idx % r);
        let (u, v) = (j as f64 - c, i as f64 - c);
        let along = u * co + v * s;
        let across = -u * s + v * co;
        let envelope = (-(along * along + across * across) / (2.0 * scale * scale)).exp();
        envelope * (2.0 * PI * frequency * along + phase).cos()
    });
    let norm = atom.norm();
    if norm < 1e-8 {
        return None;
    }
    atom /= norm;
    Some(atom)
}

/// Builds the `r^2 x num_atoms` dictionary; columns have unit norm and no two are
/// collinear.
pub fn generate_gabor(spec: &GaborSpec) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let r = spec.patch_size;
    let mut atoms: Vec<DVector<f64>> = Vec::with_capacity(spec.num_atoms);
    let push = |atom: DVector<f64>, atoms: &mut Vec<DVector<f64>>| {
        if atoms.iter().all(|a| a.dot(&atom).abs() < 1.0 - 1e-9) {
            atoms.push(atom);
        }
    };
    'grid: for &scale in &spec.scales {
        for &freq in &spec.frequencies {
            for &theta in &spec.orientations {
                for &phase in &spec.phases {
                    if atoms.len() == spec.num_atoms {
                        break 'grid;
                    }
                    if let Some(atom) = gabor_atom(r, theta, freq, scale, phase) {
                        push(atom, &mut atoms);
                    }
                }
            }
        }
    }
    if atoms.len() < spec.num_atoms {
        if !spec.allow_jitter {
            return Err(Error::Parameter(format!(
                "Gabor grid yields only {} distinct atoms, {} requested",
                atoms.len(),
                spec.num_atoms
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let f_hi = spec.frequencies.iter().copied().fold(0.0, f64::max).max(0.05);
        let mut attempts = 0usize;
        while atoms.len() < spec.num_atoms {
            attempts += 1;
            if attempts > 1000 * spec.num_atoms {
                return Err(Error::Parameter(format!(
                    "could not draw {} distinct Gabor atoms on a {r}x{r} grid",
                    spec.num_atoms
                )));
            }
            let theta = rng.gen_range(0.0..PI);
            let freq = rng.gen_range(0.0..=f_hi);
            let scale = spec.scales[rng.gen_range(0..spec.scales.len())];
            let phase = rng.gen_range(0.0..2.0 * PI);
            if let Some(atom) = gabor_atom(r, theta, freq, scale, phase) {
                push(atom, &mut atoms);
            }
        }
    }
    Ok(DMatrix::from_columns(&atoms))
}

/// A deterministic grayscale test image with a roughly `1/f` spectrum plus a few
/// sharp edges, standing in for natural-image patches.
pub fn synthetic_image(side: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = DMatrix::zeros(side, side);
    for _ in 0..96 {
        let f: f64 = rng.gen_range(1.0 / side as f64..0.45);
        let theta = rng.gen_range(0.0..PI);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let amp = 1.0 / (f * side as f64);
        let (s, c) = theta.sin_cos();
        for i in 0..side {
            for j in 0..side {
                let t = j as f64 * c + i as f64 * s;
                img[(i, j)] += amp * (2.0 * PI * f * t + phase).cos();
            }
        }
    }
    for _ in 0..6 {
        let theta = rng.gen_range(0.0..2.0 * PI);
        let (s, c) = theta.sin_cos();
        let offset = rng.gen_range(0.0..side as f64);
        let step = rng.gen_range(-2.0..2.0);
        for i in 0..side {
            for j in 0..side {
                if j as f64 * c + i as f64 * s > offset {
                    img[(i, j)] += step;
                }
            }
        }
    }
    img
}

/// Random `r x r` patches of `image`, vectorized row-major, mean-removed and scaled to
/// unit norm. Flat patches are skipped.
pub fn sample_patches(image: &DMatrix<f64>, r: usize, count: usize, seed: u64) -> Vec<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = image.shape();
    let mut out = Vec::with_capacity(count);
    if r == 0 || r > h || r > w {
        return out;
    }
    let mut attempts = 0;
    while out.len() < count && attempts < 100 * count {
        attempts += 1;
        let (i0, j0) = (rng.gen_range(0..=h - r), rng.gen_range(0..=w - r));
        let mut patch = DVector::from_fn(r * r, |idx, _| image[(i0 + idx / r, j0 + idx % r)]);
        let mean = patch.mean();
        patch.add_scalar_mut(-mean);
        let norm = patch.norm();
        if norm > 1e-6 {
            out.push(patch / norm);
        }
    }
    out
}

/// Gabor-dictionary instances `(D, patch)`, one per sampled patch.
pub fn gabor_instances(spec: &GaborSpec, count: usize, seed: u64) -> Result<Vec<Instance>> {
    let dict = generate_gabor(spec)?;
    let image = synthetic_image(128, seed);
    sample_patches(&image, spec.patch_size, count, seed.wrapping_add(1))
        .into_iter()
        .enumerate()
        .map(|(i, patch)| {
            Instance::new(
                dict.clone(),
                patch,
                Some(format!("gabor-r{}-p{}-s{}-{}", spec.patch_size, spec.num_atoms, seed, i)),
            )
        })
        .collect()
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Serialize)]
struct InstanceFileOut<'a> {
    n: usize,
    p: usize,
    x: Vec<Vec<f64>>,
    y: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<&'a str>,
}

#[derive(Deserialize)]
struct InstanceFileIn {
    n: usize,
    p: usize,
    x: Vec<Vec<Real>>,
    y: Vec<Real>,
    #[serde(default)]
    name: Option<String>,
}

/// A float that also accepts `"NaN"`, `"inf"` and friends as strings so that such
/// files surface as validation errors instead of opaque syntax errors.
struct Real(f64);

impl<'de> Deserialize<'de> for Real {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct RealVisitor;
        impl Visitor<'_> for RealVisitor {
            type Value = Real;
            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Real, E> {
                Ok(Real(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Real, E> {
                Ok(Real(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Real, E> {
                v.trim()
                    .parse::<f64>()
                    .map(Real)
                    .map_err(|_| E::custom(format!("`{v}` is not a number")))
            }
        }
        d.deserialize_any(RealVisitor)
    }
}

pub fn to_json(inst: &Instance) -> String {
    let x = (0..inst.n())
        .map(|i| inst.x.row(i).iter().copied().collect())
        .collect();
    let file = InstanceFileOut {
        n: inst.n(),
        p: inst.p(),
        x,
        y: inst.y.as_slice(),
        name: inst.name(),
    };
    serde_json::to_string(&file).expect("finite floats always serialize")
}

pub fn from_json(text: &str) -> Result<Instance> {
    let file: InstanceFileIn = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    if file.x.len() != file.n {
        return Err(Error::Validation(format!(
            "header says n = {} but x has {} rows",
            file.n,
            file.x.len()
        )));
    }
    if let Some((i, row)) = file.x.iter().enumerate().find(|(_, r)| r.len() != file.p) {
        return Err(Error::Validation(format!(
            "x row {i} has {} entries, expected p = {}",
            row.len(),
            file.p
        )));
    }
    let x = DMatrix::from_fn(file.n, file.p, |i, j| file.x[i][j].0);
    let y = DVector::from_iterator(file.y.len(), file.y.iter().map(|v| v.0));
    Instance::new(x, y, file.name)
}

pub fn save_instance(inst: &Instance, path: impl AsRef<Path>) -> Result<()> {
    let mut text = to_json(inst);
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    from_json(&text).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

fn parse_numeric_rows(text: &str, label: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(field, tok)| {
                tok.parse::<f64>().map_err(|_| Error::Parse {
                    context: format!("{label} line {} field {}", lineno + 1, field + 1),
                    message: format!("`{tok}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Reads a design matrix (one row per line) and a response vector (one value per line
/// or a single row) from comma- or whitespace-separated text.
pub fn from_csv(x_text: &str, y_text: &str, name: Option<String>) -> Result<Instance> {
    let rows = parse_numeric_rows(x_text, "matrix")?;
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != p) {
        return Err(Error::Validation(format!(
            "matrix row {} has {} fields, expected {p}",
            i + 1,
            r.len()
        )));
    }
    let y: Vec<f64> = parse_numeric_rows(y_text, "vector")?.into_iter().flatten().collect();
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
    Instance::new(x, DVector::from_vec(y), name)
}

pub fn load_csv(x_path: impl AsRef<Path>, y_path: impl AsRef<Path>) -> Result<Instance> {
    let name = x_path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned());
    from_csv(&fs::read_to_string(x_path)?, &fs::read_to_string(y_path)?, name)
}

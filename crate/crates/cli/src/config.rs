//! Experiment configuration: a flat-section key-value file, its validation
//! rules, and a content hash for provenance.
//!
//! A configuration file is TOML restricted to four flat sections (`geometry`,
//! `params`, `mesh`, `study`), each holding plain key-value pairs. Every key
//! has a default, so any subset of keys, including the empty file, is a valid
//! configuration; command-line flags override file values. Unknown keys are
//! rejected rather than ignored.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use twoscale_lod::twoscale::{BoundaryDatum, ProblemParams};
use twoscale_lod::Cplx;

/// Side lengths of the square subdomain and inclusion. The macro domain is
/// the unit square and the periodicity cell the centered unit square; both
/// inner squares are centered in their hosts.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    /// Side of the subdomain carrying cell profiles, strictly between 0 and 1.
    pub subdomain_side: f64,
    /// Side of the inclusion inside the cell, strictly between 0 and 1.
    pub inclusion_side: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { subdomain_side: 0.5, inclusion_side: 0.5 }
    }
}

/// Physical parameters and the boundary datum.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParamsConfig {
    /// Wave number for single solves, decay, and quasi-optimality studies.
    pub k: f64,
    /// Wave numbers of the pollution sweep, paired entrywise with
    /// `mesh.macro_sweep`; keeping `k / n` constant fixes `k H`.
    pub k_sweep: Vec<f64>,
    /// Permittivity outside the inclusions.
    pub eps_e: f64,
    /// Real part of the inclusion permittivity.
    pub eps_i_re: f64,
    /// Imaginary part of the inclusion permittivity.
    pub eps_i_im: f64,
    /// Boundary datum kind: `plane-wave` or `constant`.
    pub boundary: String,
    /// Plane-wave direction.
    pub direction: [f64; 2],
    /// Real part of the constant datum.
    pub boundary_re: f64,
    /// Imaginary part of the constant datum.
    pub boundary_im: f64,
    /// Sub-segments per boundary edge in the load quadrature.
    pub quad_splits: usize,
}

impl Default for ParamsConfig {
    fn default() -> Self {
        Self {
            k: 4.0,
            k_sweep: Vec::new(),
            eps_e: 1.0,
            eps_i_re: 1.0,
            eps_i_im: 0.5,
            boundary: "plane-wave".to_string(),
            direction: [1.0, 0.0],
            boundary_re: 1.0,
            boundary_im: 0.0,
            quad_splits: 3,
        }
    }
}

/// Mesh resolutions: cells per side of the coarse grids and the number of
/// uniform refinements separating the fine grids from them.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshConfig {
    /// Coarse macro cells per side for single solves and the decay study.
    pub macro_n: usize,
    /// Coarse macro resolutions of the quasi-optimality and pollution sweeps;
    /// an empty list falls back to `[macro_n]`.
    pub macro_sweep: Vec<usize>,
    /// Refinement levels between the coarse and fine macro grids.
    pub macro_refine: usize,
    /// Coarse cell-grid cells per side.
    pub cell_n: usize,
    /// Refinement levels between the coarse and fine cell grids.
    pub cell_refine: usize,
}

impl Default for MeshConfig {
    fn default() -> Self {
        Self { macro_n: 8, macro_sweep: Vec::new(), macro_refine: 1, cell_n: 4, cell_refine: 1 }
    }
}

/// Which study runs and how its sampling behaves.
#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Study kind: `single`, `decay`, `quasiopt`, or `sweep`.
    pub kind: String,
    /// Oversampling order: a number, or `auto` to derive it from a measured
    /// decay rate.
    pub m: String,
    /// Largest patch order of the decay study, profiled from order zero.
    pub m_max: usize,
    /// Seed elements drawn per component kind in the decay study.
    pub seeds_per_kind: usize,
    /// Seed for every random draw a study makes.
    pub seed: u64,
    /// Output directory for tables and plot data.
    pub out: String,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: "single".to_string(),
            m: "auto".to_string(),
            m_max: 4,
            seeds_per_kind: 3,
            seed: 7,
            out: "out".to_string(),
        }
    }
}

/// The four experiment studies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StudyKind {
    Single,
    Decay,
    QuasiOpt,
    Sweep,
}

impl StudyKind {
    /// Parses a study token; `single-solve` is accepted for `single`.
    pub fn parse(word: &str) -> Result<Self> {
        Ok(match word {
            "single" | "single-solve" => StudyKind::Single,
            "decay" => StudyKind::Decay,
            "quasiopt" => StudyKind::QuasiOpt,
            "sweep" => StudyKind::Sweep,
            other => bail!("unknown study kind {other:?}; use single, decay, quasiopt, or sweep"),
        })
    }

    /// Canonical token, also the output file stem.
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Single => "single",
            StudyKind::Decay => "decay",
            StudyKind::QuasiOpt => "quasiopt",
            StudyKind::Sweep => "sweep",
        }
    }
}

/// Oversampling order choice: fixed, or derived from a calibrated decay rate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderChoice {
    Auto,
    Fixed(usize),
}

impl OrderChoice {
    pub fn parse(word: &str) -> Result<Self> {
        if word == "auto" {
            return Ok(OrderChoice::Auto);
        }
        let m = word.parse().with_context(|| format!("oversampling order {word:?} is neither auto nor a number"))?;
        Ok(OrderChoice::Fixed(m))
    }
}

/// One fully specified experiment. All studies and the provenance hash are
/// functions of this value and nothing else.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub params: ParamsConfig,
    pub mesh: MeshConfig,
    pub study: StudyConfig,
}

impl ExperimentConfig {
    /// Parses a configuration file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Parses configuration text; missing keys keep their defaults.
    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Checks every invariant the studies rely on.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        ensure!(
            g.subdomain_side > 0.0 && g.subdomain_side < 1.0,
            "subdomain_side must lie strictly between 0 and 1, got {}",
            g.subdomain_side
        );
        ensure!(
            g.inclusion_side > 0.0 && g.inclusion_side < 1.0,
            "inclusion_side must lie strictly between 0 and 1, got {}",
            g.inclusion_side
        );
        let p = &self.params;
        ensure!(p.k > 0.0, "the wave number must be positive, got {}", p.k);
        ensure!(p.eps_e > 0.0, "eps_e must be positive, got {}", p.eps_e);
        ensure!(p.eps_i_re > 0.0, "the real part of eps_i must be positive, got {}", p.eps_i_re);
        ensure!(p.quad_splits >= 1, "quad_splits must be at least 1");
        if p.boundary != "plane-wave" && p.boundary != "constant" {
            bail!("unknown boundary datum {:?}; use plane-wave or constant", p.boundary);
        }
        let m = &self.mesh;
        ensure!(m.macro_n >= 1, "macro_n must be at least 1");
        ensure!(m.cell_n >= 2, "cell_n must be at least 2");
        ensure!(m.macro_refine >= 1, "the fine macro grid needs at least one refinement level");
        ensure!(m.cell_refine >= 1, "the fine cell grid needs at least one refinement level");
        let s = &self.study;
        let kind = StudyKind::parse(&s.kind)?;
        OrderChoice::parse(&s.m)?;
        ensure!(s.seeds_per_kind >= 1, "seeds_per_kind must be at least 1");
        ensure!(s.m_max >= 1, "m_max must be at least 1");
        ensure!(!s.out.is_empty(), "the output directory must not be empty");
        match kind {
            StudyKind::QuasiOpt => {
                ensure!(
                    self.macro_resolutions().len() >= 2,
                    "the quasi-optimality study needs at least two macro_sweep entries"
                );
            }
            StudyKind::Sweep => {
                ensure!(!p.k_sweep.is_empty(), "the pollution sweep needs a k_sweep list");
                ensure!(
                    p.k_sweep.len() == m.macro_sweep.len(),
                    "k_sweep and macro_sweep must pair entrywise, got {} and {} entries",
                    p.k_sweep.len(),
                    m.macro_sweep.len()
                );
                ensure!(p.k_sweep.iter().all(|&k| k > 0.0), "k_sweep entries must be positive");
            }
            _ => {}
        }
        ensure!(m.macro_sweep.iter().all(|&n| n >= 1), "macro_sweep entries must be at least 1");
        Ok(())
    }

    pub fn kind(&self) -> StudyKind {
        StudyKind::parse(&self.study.kind).expect("validated study kind")
    }

    pub fn order_choice(&self) -> OrderChoice {
        OrderChoice::parse(&self.study.m).expect("validated oversampling order")
    }

    /// Inclusion permittivity as a complex number.
    pub fn eps_i(&self) -> Cplx<f64> {
        Cplx::new(self.params.eps_i_re, self.params.eps_i_im)
    }

    /// Problem parameters at the given wave number.
    pub fn problem_params(&self, k: f64) -> ProblemParams<f64> {
        let boundary = if self.params.boundary == "constant" {
            BoundaryDatum::Constant(Cplx::new(self.params.boundary_re, self.params.boundary_im))
        } else {
            BoundaryDatum::PlaneWave { direction: self.params.direction }
        };
        ProblemParams {
            k,
            eps_e: self.params.eps_e,
            eps_i: self.eps_i(),
            boundary,
            quad_splits: self.params.quad_splits,
        }
    }

    /// Coarse macro resolutions a sweeping study visits.
    pub fn macro_resolutions(&self) -> Vec<usize> {
        if self.mesh.macro_sweep.is_empty() {
            vec![self.mesh.macro_n]
        } else {
            self.mesh.macro_sweep.clone()
        }
    }

    /// Wave number and coarse macro resolution pairs of the pollution sweep.
    pub fn sweep_pairs(&self) -> Vec<(f64, usize)> {
        self.params.k_sweep.iter().copied().zip(self.mesh.macro_sweep.iter().copied()).collect()
    }

    /// Every experiment-defining key in a fixed order; the input of the
    /// provenance hash. The output directory only places files and is left
    /// out, so moving a study does not change its identity.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        writeln!(s, "geometry.subdomain_side={}", g.subdomain_side).unwrap();
        writeln!(s, "geometry.inclusion_side={}", g.inclusion_side).unwrap();
        let p = &self.params;
        writeln!(s, "params.k={}", p.k).unwrap();
        writeln!(s, "params.k_sweep={:?}", p.k_sweep).unwrap();
        writeln!(s, "params.eps_e={}", p.eps_e).unwrap();
        writeln!(s, "params.eps_i={},{}", p.eps_i_re, p.eps_i_im).unwrap();
        writeln!(s, "params.boundary={}", p.boundary).unwrap();
        writeln!(s, "params.direction={},{}", p.direction[0], p.direction[1]).unwrap();
        writeln!(s, "params.boundary_value={},{}", p.boundary_re, p.boundary_im).unwrap();
        writeln!(s, "params.quad_splits={}", p.quad_splits).unwrap();
        let m = &self.mesh;
        writeln!(s, "mesh.macro_n={}", m.macro_n).unwrap();
        writeln!(s, "mesh.macro_sweep={:?}", m.macro_sweep).unwrap();
        writeln!(s, "mesh.macro_refine={}", m.macro_refine).unwrap();
        writeln!(s, "mesh.cell_n={}", m.cell_n).unwrap();
        writeln!(s, "mesh.cell_refine={}", m.cell_refine).unwrap();
        let t = &self.study;
        writeln!(s, "study.kind={}", t.kind).unwrap();
        writeln!(s, "study.m={}", t.m).unwrap();
        writeln!(s, "study.m_max={}", t.m_max).unwrap();
        writeln!(s, "study.seeds_per_kind={}", t.seeds_per_kind).unwrap();
        writeln!(s, "study.seed={}", t.seed).unwrap();
        s
    }

    /// Content hash of the effective configuration.
    pub fn config_hash(&self) -> String {
        sha_hex(&self.canonical())
    }
}

/// Hex digest of a text, used for the config hash and corrector cache tags.
pub fn sha_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    let mut out = String::with_capacity(64);
    for b in digest {
        write!(out, "{b:02x}").unwrap();
    }
    out
}

//! Deterministic dynamical systems `x_{k+1} = F(x_k)`, `y_k = H(x_k)` on a box,
//! the word classes `[w]` they induce, and their Markov-chain abstractions.
//!
//! Points of `[w]` are the states whose next `|w|` outputs spell `w`.
//! Regions are half-open (lower bound included, upper excluded) except on the
//! upper face of the state space, which makes `H` total on the closed box.

mod abstraction;
mod measure;

pub use abstraction::{build_abstraction, class_membership, Abstraction, AdaptivePartition};
pub use measure::{ExactOracle, MeasureOracle, Provenance, SampleCloud, SampledOracle};

use serde::{Deserialize, Serialize};

use crate::chain::{Alphabet, Word};
use crate::error::{Error, Result};

/// Axis-aligned hyperrectangle `[lower, upper]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Rect {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Shape("box bounds must have equal, nonzero dimension".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidSystem(format!(
                "box {lower:?}..{upper:?} has an empty side"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (u - l).max(0.0))
            .product()
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let lower: Vec<f64> = self.lower.iter().zip(&other.lower).map(|(a, b)| a.max(*b)).collect();
        let upper: Vec<f64> = self.upper.iter().zip(&other.upper).map(|(a, b)| a.min(*b)).collect();
        if lower.iter().zip(&upper).all(|(l, u)| l < u) {
            Some(Rect { lower, upper })
        } else {
            None
        }
    }

    pub fn contains_closed(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
    }

    /// Half-open membership, closing the faces shared with `space`'s upper bound.
    pub fn contains_half_open(&self, x: &[f64], space: &Rect) -> bool {
        x.iter().enumerate().all(|(i, &v)| {
            v >= self.lower[i] && (v < self.upper[i] || (v == self.upper[i] && v == space.upper[i]))
        })
    }

    pub fn corners(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                (0..d)
                    .map(|i| if mask >> i & 1 == 1 { self.upper[i] } else { self.lower[i] })
                    .collect()
            })
            .collect()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

/// `x -> matrix * x + offset`, matrix row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub matrix: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn identity(d: usize) -> Self {
        let matrix = (0..d)
            .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            matrix,
            offset: vec![0.0; d],
        }
    }

    /// Diagonal map `x_i -> scale_i * x_i + offset_i`.
    pub fn diagonal(scale: &[f64], offset: &[f64]) -> Self {
        let d = scale.len();
        let matrix = (0..d)
            .map(|i| (0..d).map(|j| if i == j { scale[i] } else { 0.0 }).collect())
            .collect();
        Self {
            matrix,
            offset: offset.to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (i, row) in self.matrix.iter().enumerate() {
            out[i] = self.offset[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    /// Diagonal entries if every off-diagonal entry is zero.
    pub fn as_diagonal(&self) -> Option<Vec<f64>> {
        let mut diag = Vec::with_capacity(self.dim());
        for (i, row) in self.matrix.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if i != j && v != 0.0 {
                    return None;
                }
            }
            diag.push(row[i]);
        }
        Some(diag)
    }

    fn check_shape(&self, d: usize) -> Result<()> {
        if self.offset.len() != d || self.matrix.len() != d || self.matrix.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(format!("affine map is not {d}-dimensional")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub name: String,
    pub rect: Rect,
    pub label: usize,
    pub map: AffineMap,
}

/// Map used for points outside every listed region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultPiece {
    pub label: usize,
    pub map: AffineMap,
}

/// `S = (X, A, F, H)`.
pub trait DynamicalSystem: Sync {
    fn space(&self) -> &Rect;
    fn alphabet(&self) -> &Alphabet;
    /// `H(x)`.
    fn output(&self, x: &[f64]) -> Result<usize>;
    /// `F(x)` written into `out`.
    fn step(&self, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// First `len` outputs `H(x), H(F(x)), ..` appended to `buf` (cleared first).
    fn output_sequence(&self, x: &[f64], len: usize, buf: &mut Vec<usize>) -> Result<()> {
        buf.clear();
        if len == 0 {
            return Ok(());
        }
        let mut cur = x.to_vec();
        let mut next = vec![0.0; cur.len()];
        for k in 0..len {
            buf.push(self.output(&cur)?);
            if k + 1 < len {
                self.step(&cur, &mut next)?;
                std::mem::swap(&mut cur, &mut next);
            }
        }
        Ok(())
    }

    fn output_word(&self, x: &[f64], len: usize) -> Result<Word> {
        let mut buf = Vec::with_capacity(len);
        self.output_sequence(x, len, &mut buf)?;
        Ok(Word::new(buf))
    }
}

/// Piecewise-affine system on a box: each rectangular region carries an affine
/// map and an output label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseAffineSystem {
    space: Rect,
    alphabet: Alphabet,
    regions: Vec<Region>,
    default: Option<DefaultPiece>,
}

/// Tolerance for corner images leaving the box.
const CLOSURE_TOLERANCE: f64 = 1e-12;

impl PiecewiseAffineSystem {
    /// Validates shapes, labels, disjointness, coverage and that every
    /// region's corners map into the box (affine images of a box lie in the
    /// hull of its corner images).
    pub fn new(
        space: Rect,
        alphabet: Alphabet,
        regions: Vec<Region>,
        default: Option<DefaultPiece>,
    ) -> Result<Self> {
        let d = space.dim();
        for r in &regions {
            if r.rect.dim() != d {
                return Err(Error::Shape(format!("region {} is not {d}-dimensional", r.name)));
            }
            r.map.check_shape(d)?;
            alphabet.check(r.label)?;
            if !space.contains_closed(&r.rect.lower, 0.0)
                || !space.contains_closed(&r.rect.upper, 0.0)
            {
                return Err(Error::InvalidSystem(format!("region {} leaves the state space", r.name)));
            }
            let mut img = vec![0.0; d];
            for c in r.rect.corners() {
                r.map.apply(&c, &mut img);
                if !space.contains_closed(&img, CLOSURE_TOLERANCE) {
                    return Err(Error::InvalidSystem(format!(
                        "region {} maps corner {c:?} to {img:?} outside the state space",
                        r.name
                    )));
                }
            }
        }
        if let Some(def) = &default {
            def.map.check_shape(d)?;
            alphabet.check(def.label)?;
        }
        for (i, a) in regions.iter().enumerate() {
            for b in &regions[i + 1..] {
                if a.rect.intersect(&b.rect).is_some() {
                    return Err(Error::InvalidSystem(format!(
                        "regions {} and {} overlap",
                        a.name, b.name
                    )));
                }
            }
        }
        if default.is_none() {
            let covered: f64 = regions.iter().map(|r| r.rect.volume()).sum();
            let total = space.volume();
            if (covered - total).abs() > 1e-9 * total {
                return Err(Error::InvalidSystem(format!(
                    "regions cover volume {covered} of {total} and no default region is given"
                )));
            }
        }
        Ok(Self {
            space,
            alphabet,
            regions,
            default,
        })
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn default_piece(&self) -> Option<&DefaultPiece> {
        self.default.as_ref()
    }

    /// Index of the region containing `x`, `None` for the default piece.
    pub fn region_of(&self, x: &[f64]) -> Result<Option<usize>> {
        if let Some(i) = self
            .regions
            .iter()
            .position(|r| r.rect.contains_half_open(x, &self.space))
        {
            return Ok(Some(i));
        }
        if self.default.is_some() && self.space.contains_closed(x, 0.0) {
            return Ok(None);
        }
        Err(Error::Covering {
            point: x.to_vec(),
            reason: "no region contains the point".into(),
        })
    }

    fn piece(&self, x: &[f64]) -> Result<(usize, &AffineMap)> {
        Ok(match self.region_of(x)? {
            Some(i) => (self.regions[i].label, &self.regions[i].map),
            None => {
                let def = self.default.as_ref().expect("region_of returned default");
                (def.label, &def.map)
            }
        })
    }
}

impl DynamicalSystem for PiecewiseAffineSystem {
    fn space(&self) -> &Rect {
        &self.space
    }

    fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    fn output(&self, x: &[f64]) -> Result<usize> {
        Ok(self.piece(x)?.0)
    }

    fn step(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.piece(x)?.1.apply(x, out);
        Ok(())
    }
}

/// Outcome of a sampling audit of `F(X) ⊆ X` and totality of `H`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosureReport {
    pub samples: usize,
    pub escapes: usize,
    pub uncovered: usize,
}

/// Samples `samples` uniform points and counts those whose image leaves the box
/// or that no region (or default) accounts for.
pub fn check_closure<S: DynamicalSystem + ?Sized>(sys: &S, samples: usize, seed: u64) -> ClosureReport {
    let cloud = SampleCloud::uniform(sys.space(), samples, seed);
    let d = sys.space().dim();
    let mut out = vec![0.0; d];
    let mut report = ClosureReport {
        samples,
        ..Default::default()
    };
    for x in cloud.points() {
        if sys.output(x).is_err() {
            report.uncovered += 1;
            continue;
        }
        match sys.step(x, &mut out) {
            Ok(()) if sys.space().contains_closed(&out, 0.0) => {}
            _ => report.escapes += 1,
        }
    }
    report
}

/// Five-region system on `[0,2] x [0,1]` with outputs `{0, 1}`:
///
/// | region | rectangle              | label | map                       |
/// |--------|------------------------|-------|---------------------------|
/// | P1     | `[1,2] x [0,1]`        | 0     | identity                  |
/// | P2     | `[0,1] x [3/4,1]`      | 1     | `(x1, x2 - 1/4)` onto P3  |
/// | P3     | `[0,1] x [1/2,3/4]`    | 1     | `(x1, 2 x2 - 1)` onto P4 ∪ P5 |
/// | P4     | `[0,1] x [0,1/4]`      | 1     | identity                  |
/// | P5     | `[0,1] x [1/4,1/2]`    | 1     | `(x1 + 1, 4 x2 - 1)` onto P1 |
///
/// The lower half of P3 lands in P4 and the upper half in P5, so the system
/// remembers up to three steps before reaching the rewarding region P1.
pub fn benchmark_system() -> PiecewiseAffineSystem {
    let rect = |l: [f64; 2], u: [f64; 2]| Rect::new(l.to_vec(), u.to_vec()).expect("valid rect");
    let region = |name: &str, r: Rect, label: usize, scale: [f64; 2], offset: [f64; 2]| Region {
        name: name.into(),
        rect: r,
        label,
        map: AffineMap::diagonal(&scale, &offset),
    };
    let regions = vec![
        region("P1", rect([1.0, 0.0], [2.0, 1.0]), 0, [1.0, 1.0], [0.0, 0.0]),
        region("P2", rect([0.0, 0.75], [1.0, 1.0]), 1, [1.0, 1.0], [0.0, -0.25]),
        region("P3", rect([0.0, 0.5], [1.0, 0.75]), 1, [1.0, 2.0], [0.0, -1.0]),
        region("P4", rect([0.0, 0.0], [1.0, 0.25]), 1, [1.0, 1.0], [0.0, 0.0]),
        region("P5", rect([0.0, 0.25], [1.0, 0.5]), 1, [1.0, 4.0], [1.0, -1.0]),
    ];
    PiecewiseAffineSystem::new(
        rect([0.0, 0.0], [2.0, 1.0]),
        Alphabet::numeric(2),
        regions,
        None,
    )
    .expect("benchmark system is valid")
}

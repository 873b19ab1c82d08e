//! Normalized Lebesgue measure of word classes, `λ([w]) / λ(X)`.

use std::collections::HashMap;
use std::sync::{Mutex, RwLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DynamicalSystem, PiecewiseAffineSystem, Rect};
use crate::chain::Word;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Exact,
    Sampled { count: usize, seed: u64 },
}

/// Source of class measures. Implementations cache by word.
pub trait MeasureOracle: Sync {
    /// `λ([w])` normalized so that `λ([Λ]) = 1`.
    fn measure(&self, w: &Word) -> Result<f64>;
    fn provenance(&self) -> Provenance;

    /// Allowed deviation of an abstraction row sum from 1.
    fn row_tolerance(&self) -> f64 {
        match self.provenance() {
            Provenance::Exact => 1e-6,
            Provenance::Sampled { .. } => 5e-2,
        }
    }
}

/// Seeded i.i.d. uniform points in a box, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleCloud {
    dim: usize,
    seed: u64,
    coords: Vec<f64>,
}

impl SampleCloud {
    pub fn uniform(space: &Rect, count: usize, seed: u64) -> Self {
        let dim = space.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coords = Vec::with_capacity(count * dim);
        for _ in 0..count {
            for i in 0..dim {
                coords.push(rng.gen_range(space.lower[i]..space.upper[i]));
            }
        }
        Self { dim, seed, coords }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.coords.chunks(self.dim)
    }
}

/// Exact measures for piecewise-affine systems with diagonal maps.
///
/// A class `[w]` is tracked as a list of rectangles in the original space
/// together with their current images under the composed diagonal map; each
/// symbol intersects the images with the regions carrying that label, pulls
/// the pieces back, and pushes the images forward one step.
pub struct ExactOracle<'a> {
    sys: &'a PiecewiseAffineSystem,
    diagonals: Vec<Vec<f64>>,
    cache: Mutex<HashMap<Word, f64>>,
}

struct Piece {
    origin: Rect,
    image: Rect,
    scale: Vec<f64>,
    shift: Vec<f64>,
}

fn affine_interval(lo: f64, hi: f64, scale: f64, shift: f64) -> (f64, f64) {
    let (a, b) = (scale * lo + shift, scale * hi + shift);
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

impl<'a> ExactOracle<'a> {
    pub fn new(sys: &'a PiecewiseAffineSystem) -> Result<Self> {
        if sys.default_piece().is_some() {
            return Err(Error::ExactUnsupported(
                "default region is not a rectangle".into(),
            ));
        }
        let mut diagonals = Vec::with_capacity(sys.regions().len());
        for r in sys.regions() {
            let diag = r.map.as_diagonal().ok_or_else(|| {
                Error::ExactUnsupported(format!("map of region {} is not diagonal", r.name))
            })?;
            if diag.contains(&0.0) {
                return Err(Error::ExactUnsupported(format!(
                    "map of region {} is singular",
                    r.name
                )));
            }
            diagonals.push(diag);
        }
        Ok(Self {
            sys,
            diagonals,
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn compute(&self, w: &Word) -> f64 {
        let space = self.sys.space();
        let d = space.dim();
        let mut pieces = vec![Piece {
            origin: space.clone(),
            image: space.clone(),
            scale: vec![1.0; d],
            shift: vec![0.0; d],
        }];
        let last = w.len().saturating_sub(1);
        for (pos, &a) in w.symbols().iter().enumerate() {
            let mut next = Vec::new();
            for piece in &pieces {
                for (ri, region) in self.sys.regions().iter().enumerate() {
                    if region.label != a {
                        continue;
                    }
                    let Some(inter) = piece.image.intersect(&region.rect) else {
                        continue;
                    };
                    let mut origin = inter.clone();
                    for i in 0..d {
                        let (l, u) = affine_interval(
                            inter.lower[i],
                            inter.upper[i],
                            1.0 / piece.scale[i],
                            -piece.shift[i] / piece.scale[i],
                        );
                        origin.lower[i] = l;
                        origin.upper[i] = u;
                    }
                    if pos == last {
                        next.push(Piece {
                            origin,
                            image: inter,
                            scale: piece.scale.clone(),
                            shift: piece.shift.clone(),
                        });
                        continue;
                    }
                    let diag = &self.diagonals[ri];
                    let offset = &region.map.offset;
                    let mut image = inter.clone();
                    let mut scale = piece.scale.clone();
                    let mut shift = piece.shift.clone();
                    for i in 0..d {
                        let (l, u) = affine_interval(inter.lower[i], inter.upper[i], diag[i], offset[i]);
                        image.lower[i] = l;
                        image.upper[i] = u;
                        scale[i] *= diag[i];
                        shift[i] = diag[i] * shift[i] + offset[i];
                    }
                    next.push(Piece {
                        origin,
                        image,
                        scale,
                        shift,
                    });
                }
            }
            pieces = next;
            if pieces.is_empty() {
                return 0.0;
            }
        }
        pieces.iter().map(|p| p.origin.volume()).sum::<f64>() / space.volume()
    }
}

impl MeasureOracle for ExactOracle<'_> {
    fn measure(&self, w: &Word) -> Result<f64> {
        w.validate(self.sys.alphabet())?;
        if w.is_empty() {
            return Ok(1.0);
        }
        if let Some(&v) = self.cache.lock().expect("cache poisoned").get(w) {
            return Ok(v);
        }
        let v = self.compute(w);
        self.cache.lock().expect("cache poisoned").insert(w.clone(), v);
        Ok(v)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Exact
    }
}

/// Monte Carlo measures: fraction of a seeded uniform cloud whose output
/// sequence starts with the word.
pub struct SampledOracle<'a, S: DynamicalSystem + ?Sized> {
    sys: &'a S,
    cloud: SampleCloud,
    outputs: RwLock<Outputs>,
    cache: Mutex<HashMap<Word, f64>>,
}

#[derive(Default)]
struct Outputs {
    len: usize,
    symbols: Vec<u8>,
}

impl<'a, S: DynamicalSystem + ?Sized> SampledOracle<'a, S> {
    pub fn new(sys: &'a S, count: usize, seed: u64) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidArgument("sample count must be positive".into()));
        }
        if sys.alphabet().len() > u8::MAX as usize + 1 {
            return Err(Error::InvalidArgument("sampled oracle supports at most 256 symbols".into()));
        }
        let cloud = SampleCloud::uniform(sys.space(), count, seed);
        Ok(Self {
            sys,
            cloud,
            outputs: RwLock::new(Outputs::default()),
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn cloud(&self) -> &SampleCloud {
        &self.cloud
    }

    /// Number of samples in `[w]`.
    pub fn hits(&self, w: &Word) -> Result<u64> {
        w.validate(self.sys.alphabet())?;
        self.ensure_len(w.len())?;
        let out = self.outputs.read().expect("outputs poisoned");
        let stride = out.len;
        let pattern: Vec<u8> = w.symbols().iter().map(|&a| a as u8).collect();
        Ok(out
            .symbols
            .par_chunks(stride.max(1))
            .filter(|seq| seq.starts_with(&pattern))
            .count() as u64)
    }

    fn ensure_len(&self, len: usize) -> Result<()> {
        if self.outputs.read().expect("outputs poisoned").len >= len {
            return Ok(());
        }
        let mut out = self.outputs.write().expect("outputs poisoned");
        if out.len >= len {
            return Ok(());
        }
        let new_len = len.max(2 * out.len).max(4);
        let rows: Vec<Result<Vec<u8>>> = (0..self.cloud.len())
            .into_par_iter()
            .map(|i| {
                let mut buf = Vec::with_capacity(new_len);
                self.sys.output_sequence(self.cloud.point(i), new_len, &mut buf)?;
                Ok(buf.into_iter().map(|a| a as u8).collect())
            })
            .collect();
        let mut symbols = Vec::with_capacity(self.cloud.len() * new_len);
        for row in rows {
            symbols.extend(row?);
        }
        *out = Outputs {
            len: new_len,
            symbols,
        };
        Ok(())
    }
}

impl<S: DynamicalSystem + ?Sized> MeasureOracle for SampledOracle<'_, S> {
    fn measure(&self, w: &Word) -> Result<f64> {
        if w.is_empty() {
            return Ok(1.0);
        }
        if let Some(&v) = self.cache.lock().expect("cache poisoned").get(w) {
            return Ok(v);
        }
        let v = self.hits(w)? as f64 / self.cloud.len() as f64;
        self.cache.lock().expect("cache poisoned").insert(w.clone(), v);
        Ok(v)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Sampled {
            count: self.cloud.len(),
            seed: self.cloud.seed(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::Alphabet;
    use crate::dynsys::benchmark_system;

    fn w(s: &str) -> Word {
        Alphabet::numeric(2).parse_word(s).unwrap()
    }

    #[test]
    fn exact_benchmark_measures() {
        let sys = benchmark_system();
        let o = ExactOracle::new(&sys).unwrap();
        let cases = [
            ("", 1.0),
            ("0", 0.5),
            ("1", 0.5),
            ("00", 0.5),
            ("01", 0.0),
            ("10", 0.125),
            ("11", 0.375),
            ("101", 0.0),
            ("110", 0.0625),
            ("111", 0.3125),
            ("1110", 0.0625),
            ("1111", 0.25),
            ("11110", 0.0),
            ("11100", 0.0625),
        ];
        for (word, expected) in cases {
            assert_eq!(o.measure(&w(word)).unwrap(), expected, "word {word}");
        }
    }

    #[test]
    fn exact_measure_telescopes() {
        let sys = benchmark_system();
        let o = ExactOracle::new(&sys).unwrap();
        for len in 0..7usize {
            for code in 0..1usize << len {
                let word = Word::new((0..len).map(|i| (code >> (len - 1 - i)) & 1).collect());
                let parent = o.measure(&word).unwrap();
                let children: f64 = (0..2).map(|a| o.measure(&word.pushed(a)).unwrap()).sum();
                assert_eq!(parent, children, "word {word}");
            }
        }
    }

    #[test]
    fn sampled_close_to_exact() {
        let sys = benchmark_system();
        let exact = ExactOracle::new(&sys).unwrap();
        let sampled = SampledOracle::new(&sys, 200_000, 3).unwrap();
        for word in ["0", "10", "110", "1110", "1111", "111"] {
            let p = exact.measure(&w(word)).unwrap();
            let q = sampled.measure(&w(word)).unwrap();
            let se = (p * (1.0 - p) / 200_000.0).sqrt();
            assert!((p - q).abs() <= 4.0 * se, "{word}: {p} vs {q}");
        }
        assert_eq!(sampled.measure(&w("01")).unwrap(), 0.0);
    }

    #[test]
    fn sampled_is_deterministic_per_seed() {
        let sys = benchmark_system();
        let a = SampledOracle::new(&sys, 10_000, 11).unwrap();
        let b = SampledOracle::new(&sys, 10_000, 11).unwrap();
        assert_eq!(a.hits(&w("1110")).unwrap(), b.hits(&w("1110")).unwrap());
        assert_eq!(a.cloud(), b.cloud());
    }

    #[test]
    fn exact_oracle_rejects_non_diagonal() {
        use crate::dynsys::{AffineMap, PiecewiseAffineSystem, Region};
        let space = Rect::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let swap = AffineMap {
            matrix: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            offset: vec![0.0, 0.0],
        };
        let sys = PiecewiseAffineSystem::new(
            space.clone(),
            Alphabet::numeric(1),
            vec![Region {
                name: "all".into(),
                rect: space,
                label: 0,
                map: swap,
            }],
            None,
        )
        .unwrap();
        assert!(matches!(ExactOracle::new(&sys), Err(Error::ExactUnsupported(_))));
        // sampling still works
        let o = SampledOracle::new(&sys, 100, 0).unwrap();
        assert_eq!(o.measure(&Word::new(vec![0, 0, 0])).unwrap(), 1.0);
    }
}

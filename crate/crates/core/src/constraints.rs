//! Declarative segmentation constraints and their differentiable evaluation
//! into canonical scalar inequalities `f_i(S) <= 0`.
//!
//! Softmax maps are `|Ω| x K` tensors with pixels in row-major order. Pixel
//! coordinates are 0-based `(column, row)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Relative guard on the centroid denominator: evaluation fails when the
/// class mass drops to `CENTROID_GUARD * |Ω|` or below.
pub const CENTROID_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    /// `lower <= Σ_p s_p^k <= upper`
    SizeBox { class: usize, lower: f64, upper: f64 },
    /// Softmax-weighted centroid of class `k` inside an axis-aligned box.
    CentroidBox {
        class: usize,
        x_lo: f64,
        x_hi: f64,
        y_lo: f64,
        y_hi: f64,
    },
    /// Class `k` has at least unit mass.
    Presence { class: usize },
}

impl ConstraintSpec {
    pub fn class(&self) -> usize {
        match *self {
            ConstraintSpec::SizeBox { class, .. }
            | ConstraintSpec::CentroidBox { class, .. }
            | ConstraintSpec::Presence { class } => class,
        }
    }

    /// Number of canonical scalar inequalities this spec expands into.
    pub fn scalar_count(&self) -> usize {
        match self {
            ConstraintSpec::SizeBox { .. } => 2,
            ConstraintSpec::CentroidBox { .. } => 4,
            ConstraintSpec::Presence { .. } => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        match *self {
            ConstraintSpec::SizeBox { lower, upper, .. } => {
                if !(lower.is_finite() && upper.is_finite()) || lower > upper {
                    return bad(format!("size box [{lower}, {upper}]"));
                }
            }
            ConstraintSpec::CentroidBox {
                x_lo,
                x_hi,
                y_lo,
                y_hi,
                ..
            } => {
                let finite = [x_lo, x_hi, y_lo, y_hi].iter().all(|v| v.is_finite());
                if !finite || x_lo > x_hi || y_lo > y_hi {
                    return bad(format!("centroid box x [{x_lo}, {x_hi}] y [{y_lo}, {y_hi}]"));
                }
            }
            ConstraintSpec::Presence { .. } => {}
        }
        Ok(())
    }
}

/// Total scalar constraint count `N` of a spec list.
pub fn scalar_count(specs: &[ConstraintSpec]) -> usize {
    specs.iter().map(ConstraintSpec::scalar_count).sum()
}

/// Which constraints to derive from a ground-truth mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintSetting {
    None,
    SizeOnly,
    CentroidOnly,
    SizeAndCentroid,
}

impl ConstraintSetting {
    pub fn wants_size(self) -> bool {
        matches!(self, ConstraintSetting::SizeOnly | ConstraintSetting::SizeAndCentroid)
    }

    pub fn wants_centroid(self) -> bool {
        matches!(self, ConstraintSetting::CentroidOnly | ConstraintSetting::SizeAndCentroid)
    }

    pub fn name(self) -> &'static str {
        match self {
            ConstraintSetting::None => "none",
            ConstraintSetting::SizeOnly => "size_only",
            ConstraintSetting::CentroidOnly => "centroid_only",
            ConstraintSetting::SizeAndCentroid => "size_and_centroid",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordGrid {
    pub width: usize,
    pub height: usize,
}

impl CoordGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec(format!("grid {width}x{height}")));
        }
        Ok(Self { width, height })
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(column, row)` of the pixel at row-major index `p`.
    pub fn coord(&self, p: usize) -> (f64, f64) {
        ((p % self.width) as f64, (p / self.width) as f64)
    }

    /// `2 x |Ω|` matrix whose rows hold the column and row coordinates.
    pub fn coords_transposed(&self) -> Tensor {
        let n = self.len();
        let mut data = Vec::with_capacity(2 * n);
        data.extend((0..n).map(|p| self.coord(p).0));
        data.extend((0..n).map(|p| self.coord(p).1));
        Tensor::matrix(2, n, data).expect("grid coordinates")
    }
}

/// Options for [`canonicalize_all`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Divide size constraints by `|Ω|`.
    pub normalize_size: bool,
}

fn class_column(tape: &mut Tape, s: Var, k: usize) -> Result<Var> {
    let (_, classes) = tape.value(s)?.dims2().ok_or_else(|| Error::Shape {
        op: "region",
        detail: format!("softmax map must be rank 2, got {:?}", tape.value(s).map(|v| v.shape().to_vec())),
    })?;
    if k >= classes {
        return Err(Error::IndexOutOfRange {
            what: "class",
            index: k,
            len: classes,
        });
    }
    tape.index_select(s, 1, &[k])
}

/// Soft region size `V^k = Σ_p s_p^k`.
pub fn region_size(tape: &mut Tape, s: Var, k: usize) -> Result<Var> {
    let col = class_column(tape, s, k)?;
    tape.sum(col)
}

/// Soft centroid `(Σ_p s_p^k c_p) / (Σ_p s_p^k)`, as two scalars.
pub fn region_centroid(tape: &mut Tape, s: Var, k: usize, grid: &CoordGrid) -> Result<(Var, Var)> {
    let col = class_column(tape, s, k)?;
    let pixels = tape.value(col)?.numel();
    if pixels != grid.len() {
        return Err(Error::Shape {
            op: "region_centroid",
            detail: format!("{pixels} pixels on a {}x{} grid", grid.width, grid.height),
        });
    }
    let mass = tape.sum(col)?;
    let m = tape.scalar(mass)?;
    let guard = CENTROID_GUARD * grid.len() as f64;
    if m <= guard {
        return Err(Error::DegenerateRegion {
            class: k,
            mass: m,
            guard,
        });
    }
    let coords = tape.input(grid.coords_transposed());
    let weighted = tape.matmul(coords, col)?;
    let centroid = tape.div(weighted, mass)?;
    let flat = tape.reshape(centroid, &[2])?;
    let cx = tape.index_select(flat, 0, &[0])?;
    let cy = tape.index_select(flat, 0, &[1])?;
    Ok((tape.reshape(cx, &[])?, tape.reshape(cy, &[])?))
}

/// Expand one spec into canonical scalars, each satisfied iff `<= 0`.
pub fn canonicalize(tape: &mut Tape, spec: &ConstraintSpec, s: Var, grid: &CoordGrid) -> Result<Vec<Var>> {
    canonicalize_with(tape, spec, s, grid, &EvalOptions::default())
}

fn lower_minus(tape: &mut Tape, lo: f64, v: Var) -> Result<Var> {
    let c = tape.constant(lo);
    tape.sub(c, v)
}

fn minus_upper(tape: &mut Tape, v: Var, hi: f64) -> Result<Var> {
    tape.add_scalar(v, -hi)
}

pub fn canonicalize_with(
    tape: &mut Tape,
    spec: &ConstraintSpec,
    s: Var,
    grid: &CoordGrid,
    opts: &EvalOptions,
) -> Result<Vec<Var>> {
    spec.validate()?;
    match *spec {
        ConstraintSpec::SizeBox { class, lower, upper } => {
            let v = region_size(tape, s, class)?;
            let lo = lower_minus(tape, lower, v)?;
            let hi = minus_upper(tape, v, upper)?;
            if opts.normalize_size {
                let scale = 1.0 / grid.len() as f64;
                Ok(vec![tape.scalar_mul(lo, scale)?, tape.scalar_mul(hi, scale)?])
            } else {
                Ok(vec![lo, hi])
            }
        }
        ConstraintSpec::CentroidBox {
            class,
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        } => {
            let (cx, cy) = region_centroid(tape, s, class, grid)?;
            Ok(vec![
                lower_minus(tape, x_lo, cx)?,
                minus_upper(tape, cx, x_hi)?,
                lower_minus(tape, y_lo, cy)?,
                minus_upper(tape, cy, y_hi)?,
            ])
        }
        ConstraintSpec::Presence { class } => {
            let v = region_size(tape, s, class)?;
            Ok(vec![lower_minus(tape, 1.0, v)?])
        }
    }
}

/// All scalars of a spec list, in order; `N == scalar_count(specs)`.
pub fn canonicalize_all(
    tape: &mut Tape,
    specs: &[ConstraintSpec],
    s: Var,
    grid: &CoordGrid,
    opts: &EvalOptions,
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(scalar_count(specs));
    for spec in specs {
        out.extend(canonicalize_with(tape, spec, s, grid, opts)?);
    }
    Ok(out)
}

/// Non-differentiable evaluation of the canonical scalars, for reporting.
pub fn constraint_values(specs: &[ConstraintSpec], s: &Tensor, grid: &CoordGrid, opts: &EvalOptions) -> Result<Vec<f64>> {
    let mut tape = Tape::unchecked();
    let sv = tape.input(s.clone());
    let vars = canonicalize_all(&mut tape, specs, sv, grid, opts)?;
    vars.into_iter().map(|v| tape.scalar(v)).collect()
}

/// Bounds derivation from a ground-truth binary mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    pub class: usize,
    pub size_factors: (f64, f64),
    pub centroid_margin: f64,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            class: 1,
            size_factors: (0.9, 1.1),
            centroid_margin: 20.0,
        }
    }
}

/// Size and/or centroid boxes around the statistics of `mask`.
pub fn bounds_from_gt(
    mask: &[bool],
    grid: &CoordGrid,
    setting: ConstraintSetting,
    cfg: &BoundsConfig,
) -> Result<Vec<ConstraintSpec>> {
    if mask.len() != grid.len() {
        return Err(Error::Shape {
            op: "bounds_from_gt",
            detail: format!("mask of {} pixels on a {}x{} grid", mask.len(), grid.width, grid.height),
        });
    }
    let count = mask.iter().filter(|&&m| m).count();
    let mut specs = Vec::new();
    if setting.wants_size() {
        let tau = count as f64;
        specs.push(ConstraintSpec::SizeBox {
            class: cfg.class,
            lower: cfg.size_factors.0 * tau,
            upper: cfg.size_factors.1 * tau,
        });
    }
    if setting.wants_centroid() {
        if count == 0 {
            return Err(Error::InvalidSpec("centroid box requested for an empty mask".into()));
        }
        let (sx, sy) = mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(|(p, _)| grid.coord(p))
            .fold((0.0, 0.0), |(ax, ay), (x, y)| (ax + x, ay + y));
        let (cx, cy) = (sx / count as f64, sy / count as f64);
        let m = cfg.centroid_margin;
        specs.push(ConstraintSpec::CentroidBox {
            class: cfg.class,
            x_lo: cx - m,
            x_hi: cx + m,
            y_lo: cy - m,
            y_hi: cy + m,
        });
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Two-class map whose foreground column is `fg`.
    fn two_class(fg: &[f64]) -> Tensor {
        let data = fg.iter().flat_map(|&p| [1.0 - p, p]).collect();
        Tensor::matrix(fg.len(), 2, data).unwrap()
    }

    fn size_of(fg: &[f64]) -> f64 {
        let mut tape = Tape::new();
        let s = tape.leaf(two_class(fg));
        let v = region_size(&mut tape, s, 1).unwrap();
        tape.scalar(v).unwrap()
    }

    fn centroid_of(fg: &[f64], grid: &CoordGrid) -> (f64, f64) {
        let mut tape = Tape::new();
        let s = tape.leaf(two_class(fg));
        let (cx, cy) = region_centroid(&mut tape, s, 1, grid).unwrap();
        (tape.scalar(cx).unwrap(), tape.scalar(cy).unwrap())
    }

    #[test]
    fn region_size_examples() {
        assert!((size_of(&[0.1, 0.2, 0.3, 0.4]) - 1.0).abs() < 1e-15);
        let mut mask = vec![0.0; 20];
        mask[3..10].iter_mut().for_each(|m| *m = 1.0);
        assert_eq!(size_of(&mask), 7.0);
        assert_eq!(size_of(&[0.5; 10]), 5.0);
    }

    #[test]
    fn region_size_gradient_is_column_indicator() {
        let mut tape = Tape::new();
        let s = tape.leaf(Tensor::matrix(3, 3, vec![0.2, 0.3, 0.5, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2]).unwrap());
        let v = region_size(&mut tape, s, 2).unwrap();
        let g = tape.backward(v).unwrap().wrt(s).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn class_out_of_range() {
        let mut tape = Tape::new();
        let s = tape.leaf(two_class(&[0.5, 0.5]));
        assert!(matches!(region_size(&mut tape, s, 2), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn centroid_examples() {
        let grid = CoordGrid::new(3, 3).unwrap();
        let (cx, cy) = centroid_of(&[1.0 / 9.0; 9], &grid);
        assert!((cx - 1.0).abs() < 1e-12 && (cy - 1.0).abs() < 1e-12);

        let grid = CoordGrid::new(10, 10).unwrap();
        let mut fg = vec![0.0; 100];
        fg[7 * 10 + 4] = 1.0;
        assert_eq!(centroid_of(&fg, &grid), (4.0, 7.0));

        let grid = CoordGrid::new(5, 1).unwrap();
        let (cx, cy) = centroid_of(&[0.25, 0.0, 0.0, 0.0, 0.75], &grid);
        assert!((cx - 3.0).abs() < 1e-12);
        assert_eq!(cy, 0.0);
    }

    #[test]
    fn centroid_rejects_vanished_region() {
        let grid = CoordGrid::new(4, 4).unwrap();
        let mut tape = Tape::new();
        let s = tape.leaf(two_class(&[1e-8; 16]));
        assert!(matches!(
            region_centroid(&mut tape, s, 1, &grid),
            Err(Error::DegenerateRegion { class: 1, .. })
        ));
    }

    #[test]
    fn centroid_is_scale_invariant() {
        let grid = CoordGrid::new(6, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fg: Vec<f64> = (0..30).map(|_| rng.random_range(0.0..0.5)).collect();
        let base = centroid_of(&fg, &grid);
        for alpha in [0.5, 2.0, 10.0] {
            let scaled: Vec<f64> = fg.iter().map(|v| v * alpha).collect();
            let c = centroid_of(&scaled, &grid);
            assert!((c.0 - base.0).abs() < 1e-12 && (c.1 - base.1).abs() < 1e-12);
        }
    }

    fn values(spec: ConstraintSpec, fg: &[f64], grid: &CoordGrid) -> Vec<f64> {
        constraint_values(&[spec], &two_class(fg), grid, &EvalOptions::default()).unwrap()
    }

    #[test]
    fn canonicalize_examples() {
        let grid = CoordGrid::new(10, 2).unwrap();
        let size = ConstraintSpec::SizeBox {
            class: 1,
            lower: 9.0,
            upper: 11.0,
        };
        assert_eq!(values(size, &[0.5; 20], &grid), vec![-1.0, -1.0]);
        assert_eq!(values(size, &[0.6; 20], &grid).iter().map(|v| v.round()).collect::<Vec<_>>(), vec![-3.0, 1.0]);

        let grid = CoordGrid::new(101, 101).unwrap();
        let mut fg = vec![0.0; grid.len()];
        fg[50 * 101 + 50] = 1.0;
        let centroid = ConstraintSpec::CentroidBox {
            class: 1,
            x_lo: 30.0,
            x_hi: 70.0,
            y_lo: 30.0,
            y_hi: 70.0,
        };
        assert_eq!(values(centroid, &fg, &grid), vec![-20.0; 4]);

        let grid = CoordGrid::new(2, 2).unwrap();
        let presence = ConstraintSpec::Presence { class: 1 };
        assert_eq!(values(presence, &[0.1, 0.2, 0.1, 0.1], &grid).len(), 1);
    }

    #[test]
    fn scalar_count_matches_expansion() {
        let specs = [
            ConstraintSpec::SizeBox {
                class: 1,
                lower: 1.0,
                upper: 3.0,
            },
            ConstraintSpec::CentroidBox {
                class: 1,
                x_lo: 0.0,
                x_hi: 2.0,
                y_lo: 0.0,
                y_hi: 2.0,
            },
            ConstraintSpec::Presence { class: 0 },
            ConstraintSpec::Presence { class: 1 },
        ];
        assert_eq!(scalar_count(&specs), 2 + 4 + 2);
        let grid = CoordGrid::new(3, 3).unwrap();
        let v = constraint_values(&specs, &two_class(&[0.3; 9]), &grid, &EvalOptions::default()).unwrap();
        assert_eq!(v.len(), 8);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = ConstraintSpec::SizeBox {
            class: 1,
            lower: 5.0,
            upper: 1.0,
        };
        assert!(bad.validate().is_err());
        let bad = ConstraintSpec::CentroidBox {
            class: 1,
            x_lo: 0.0,
            x_hi: 1.0,
            y_lo: 2.0,
            y_hi: 1.0,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sign_convention_matches_interval_tests() {
        let grid = CoordGrid::new(8, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let (mut sat, mut unsat) = (0, 0);
        for _ in 0..100 {
            let fg: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..1.0f64).powi(2)).collect();
            let lower = rng.random_range(5.0..20.0);
            let upper = lower + rng.random_range(0.0..15.0);
            let (x_lo, y_lo) = (rng.random_range(1.0..4.0), rng.random_range(1.0..3.0));
            let (x_hi, y_hi) = (x_lo + rng.random_range(0.0..3.0), y_lo + rng.random_range(0.0..2.5));
            let specs = [
                ConstraintSpec::SizeBox { class: 1, lower, upper },
                ConstraintSpec::CentroidBox {
                    class: 1,
                    x_lo,
                    x_hi,
                    y_lo,
                    y_hi,
                },
            ];
            let f = constraint_values(&specs, &two_class(&fg), &grid, &EvalOptions::default()).unwrap();

            let v: f64 = fg.iter().sum();
            let (sx, sy) = fg.iter().enumerate().fold((0.0, 0.0), |(ax, ay), (p, &w)| {
                let (x, y) = grid.coord(p);
                (ax + w * x, ay + w * y)
            });
            let (cx, cy) = (sx / v, sy / v);
            let direct = (lower..=upper).contains(&v) && (x_lo..=x_hi).contains(&cx) && (y_lo..=y_hi).contains(&cy);
            assert_eq!(f.iter().all(|&fi| fi <= 0.0), direct);
            if direct {
                sat += 1
            } else {
                unsat += 1
            }
        }
        assert!(sat > 0 && unsat > 0, "sat {sat} unsat {unsat}");
    }

    #[test]
    fn bounds_examples() {
        let grid = CoordGrid::new(20, 10).unwrap();
        let mut mask = vec![false; 200];
        mask[..100].iter_mut().for_each(|m| *m = true);
        let specs = bounds_from_gt(&mask, &grid, ConstraintSetting::SizeOnly, &BoundsConfig::default()).unwrap();
        assert_eq!(
            specs,
            vec![ConstraintSpec::SizeBox {
                class: 1,
                lower: 90.0,
                upper: 110.00000000000001
            }]
        );

        let grid = CoordGrid::new(64, 64).unwrap();
        let mut mask = vec![false; grid.len()];
        mask[20 * 64 + 10] = true;
        let specs = bounds_from_gt(&mask, &grid, ConstraintSetting::CentroidOnly, &BoundsConfig::default()).unwrap();
        assert_eq!(
            specs,
            vec![ConstraintSpec::CentroidBox {
                class: 1,
                x_lo: -10.0,
                x_hi: 30.0,
                y_lo: 0.0,
                y_hi: 40.0
            }]
        );
    }

    #[test]
    fn bounds_require_foreground_for_centroid() {
        let grid = CoordGrid::new(4, 4).unwrap();
        let mask = vec![false; 16];
        assert!(bounds_from_gt(&mask, &grid, ConstraintSetting::SizeAndCentroid, &BoundsConfig::default()).is_err());
        assert!(bounds_from_gt(&mask, &grid, ConstraintSetting::SizeOnly, &BoundsConfig::default()).is_ok());
    }

    #[test]
    fn normalized_size_divides_by_pixel_count() {
        let grid = CoordGrid::new(5, 4).unwrap();
        let spec = ConstraintSpec::SizeBox {
            class: 1,
            lower: 2.0,
            upper: 4.0,
        };
        let opts = EvalOptions { normalize_size: true };
        let v = constraint_values(&[spec], &two_class(&[0.25; 20]), &grid, &opts).unwrap();
        assert!((v[0] + 3.0 / 20.0).abs() < 1e-15);
        assert!((v[1] - 1.0 / 20.0).abs() < 1e-15);
    }
}

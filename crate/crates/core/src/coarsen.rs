//! Low-pass mollification of fine fields and projection onto coarse grids.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, StaggeredField};

/// Centered convolution kernel with odd dimensions, weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    kx: usize,
    ky: usize,
    weights: Vec<f64>,
}

impl Kernel {
    /// Build from raw row-major entries, normalized by their sum.
    pub fn normalized(kx: usize, ky: usize, raw: Vec<f64>) -> Result<Kernel> {
        if kx.is_multiple_of(2) || ky.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!("kernel dimensions must be odd, got {kx}x{ky}")));
        }
        if raw.len() != kx * ky {
            return Err(Error::InvalidParameter(format!(
                "kernel {kx}x{ky} needs {} entries, got {}",
                kx * ky,
                raw.len()
            )));
        }
        if raw.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter("kernel weights must be finite and nonnegative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("kernel weights sum to zero".into()));
        }
        Ok(Kernel { kx, ky, weights: raw.into_iter().map(|w| w / total).collect() })
    }

    pub fn kx(&self) -> usize {
        self.kx
    }

    pub fn ky(&self) -> usize {
        self.ky
    }

    /// Row-major weights, `a` (zonal offset) fastest.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, a: usize, b: usize) -> f64 {
        self.weights[b * self.kx + a]
    }

    /// Kernel paired with a coarsening factor: the 3x3 box for `c = 4`,
    /// the 9x9 pyramid for `c = 8`.
    pub fn for_factor(c: usize) -> Result<Kernel> {
        match c {
            4 => Ok(kernel_c4()),
            8 => Ok(kernel_c8()),
            _ => Err(Error::InvalidParameter(format!("no kernel defined for coarsening factor {c}; expected 4 or 8"))),
        }
    }
}

/// Uniform 3x3 box.
pub fn kernel_c4() -> Kernel {
    Kernel { kx: 3, ky: 3, weights: vec![1.0 / 9.0; 9] }
}

/// Raw integer entries of the 9x9 pyramid: each entry is its distance to
/// the nearest edge plus one, capped by the centre value 5.
pub fn pyramid_entries() -> Vec<f64> {
    let mut raw = Vec::with_capacity(81);
    for b in 0..9usize {
        for a in 0..9usize {
            raw.push((a.min(8 - a).min(b).min(8 - b) + 1) as f64);
        }
    }
    raw
}

/// 9x9 pyramid scaled by 1/165.
pub fn kernel_c8() -> Kernel {
    Kernel { kx: 9, ky: 9, weights: pyramid_entries().into_iter().map(|w| w / 165.0).collect() }
}

/// Discrete convolution with periodic east-west wrap.
///
/// Rows within half a kernel height of the north or south edge are copied
/// from the input. With `conserve`, a single constant is then added to the
/// convolved rows so that the sum over the whole array matches the input.
pub fn mollify_with(field: &StaggeredField, kernel: &Kernel, conserve: bool) -> Result<StaggeredField> {
    let grid = *field.grid();
    let (nx, ny) = (grid.nx, grid.ny);
    let (hx, hy) = (kernel.kx / 2, kernel.ky / 2);
    if kernel.kx > nx || kernel.ky > ny || 2 * hy >= ny {
        return Err(Error::KernelTooLarge { kx: kernel.kx, ky: kernel.ky, nx, ny });
    }
    let input = field.values();
    let mut out = input.to_vec();
    let inner = hy..ny - hy;
    out[hy * nx..(ny - hy) * nx].par_chunks_mut(nx).enumerate().for_each(|(r, row)| {
        let j = r + hy;
        for (i, o) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for b in 0..kernel.ky {
                let src = &input[(j + b - hy) * nx..(j + b - hy + 1) * nx];
                let w = &kernel.weights[b * kernel.kx..(b + 1) * kernel.kx];
                for (a, wa) in w.iter().enumerate() {
                    acc += wa * src[(i + nx + a - hx) % nx];
                }
            }
            *o = acc;
        }
    });
    if conserve {
        let deficit = input.iter().sum::<f64>() - out.iter().sum::<f64>();
        let shift = deficit / (inner.len() * nx) as f64;
        for v in &mut out[inner.start * nx..inner.end * nx] {
            *v += shift;
        }
    }
    StaggeredField::from_values(field.kind(), grid, out)
}

/// Mollification with the sum-preserving correction.
pub fn mollify(field: &StaggeredField, kernel: &Kernel) -> Result<StaggeredField> {
    mollify_with(field, kernel, true)
}

/// Pointwise restriction `out(i, j) = in(c i, c j)`.
pub fn subsample(field: &StaggeredField, c: usize) -> Result<StaggeredField> {
    let fine = *field.grid();
    let coarse = fine.coarsened(c)?;
    Ok(StaggeredField::from_index_fn(field.kind(), coarse, |i, j| field.get(c * i, c * j)))
}

/// Pairing of a coarsening factor with its kernel and the two grids.
#[derive(Debug, Clone)]
pub struct CoarseningSpec {
    pub c: usize,
    pub kernel: Kernel,
    pub fine: GridSpec,
    pub coarse: GridSpec,
}

impl CoarseningSpec {
    pub fn new(fine: GridSpec, c: usize, kernel: Kernel) -> Result<Self> {
        let coarse = fine.coarsened(c)?;
        Ok(CoarseningSpec { c, kernel, fine, coarse })
    }

    /// Mollify then subsample.
    pub fn project(&self, field: &StaggeredField) -> Result<StaggeredField> {
        subsample(&mollify(field, &self.kernel)?, self.c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Kind;
    use proptest::prelude::*;

    fn grid(nx: usize, ny: usize) -> GridSpec {
        GridSpec::new(nx as f64, ny as f64, nx, ny).unwrap()
    }

    // Direct evaluation of the convolution sum with explicit offsets.
    fn oracle(field: &StaggeredField, kernel: &Kernel, i: usize, j: usize) -> f64 {
        let (hx, hy) = (kernel.kx() as isize / 2, kernel.ky() as isize / 2);
        let mut acc = 0.0;
        for dy in -hy..=hy {
            for dx in -hx..=hx {
                let w = kernel.weight((dx + hx) as usize, (dy + hy) as usize);
                acc += w * field.at(i as isize + dx, j as isize + dy);
            }
        }
        acc
    }

    #[test]
    fn box_kernel() {
        let k = kernel_c4();
        assert_eq!(k.weights().len(), 9);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(k.weight(1, 1), 1.0 / 9.0);
    }

    #[test]
    fn pyramid_kernel() {
        let raw = pyramid_entries();
        assert_eq!(raw.iter().sum::<f64>(), 165.0);
        let row_sums: Vec<f64> = raw.chunks(9).map(|r| r.iter().sum()).collect();
        assert_eq!(row_sums, vec![9.0, 16.0, 21.0, 24.0, 25.0, 24.0, 21.0, 16.0, 9.0]);
        assert_eq!(&raw[4 * 9..5 * 9], &[1.0, 2.0, 3.0, 4.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert_eq!(&raw[2 * 9..3 * 9], &[1.0, 2.0, 3.0, 3.0, 3.0, 3.0, 3.0, 2.0, 1.0]);
        let k = kernel_c8();
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-14);
        assert_eq!(k.weight(4, 4), 5.0 / 165.0);
        for a in 0..9 {
            for b in 0..9 {
                assert_eq!(k.weight(a, b), k.weight(b, a));
                assert_eq!(k.weight(a, b), k.weight(8 - a, b));
            }
        }
    }

    #[test]
    fn kernel_validation() {
        assert!(Kernel::normalized(2, 3, vec![1.0; 6]).is_err());
        assert!(Kernel::normalized(3, 3, vec![1.0; 8]).is_err());
        assert!(Kernel::normalized(1, 1, vec![-1.0]).is_err());
        assert_eq!(Kernel::normalized(3, 3, vec![2.0; 9]).unwrap(), kernel_c4());
        assert!(Kernel::for_factor(5).is_err());
    }

    #[test]
    fn constant_is_fixed() {
        let f = StaggeredField::constant(Kind::H, grid(20, 16), 4.25);
        for k in [kernel_c4(), kernel_c8()] {
            let out = mollify(&f, &k).unwrap();
            assert!(out.values().iter().all(|v| (v - 4.25).abs() < 1e-13));
        }
    }

    #[test]
    fn spike_leaves_pyramid_imprint() {
        let g = grid(24, 20);
        let mut f = StaggeredField::zeros(Kind::H, g);
        f.set(12, 10, 165.0);
        let out = mollify_with(&f, &kernel_c8(), false).unwrap();
        assert!((out.get(12, 10) - 5.0).abs() < 1e-12);
        assert!((out.get(13, 10) - 4.0).abs() < 1e-12);
        assert!((out.get(16, 14) - 1.0).abs() < 1e-12);
        assert_eq!(out.get(17, 10), 0.0);
        // already balanced, so the correction is a no-op
        assert_eq!(mollify(&f, &kernel_c8()).unwrap(), out);
    }

    #[test]
    fn matches_direct_convolution_and_copies_band() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let g = grid(23, 17);
        let f = StaggeredField::from_index_fn(Kind::H, g, |_, _| rng.random_range(-1.0..1.0));
        for k in [kernel_c4(), kernel_c8()] {
            let hy = k.ky() / 2;
            let out = mollify_with(&f, &k, false).unwrap();
            for j in 0..g.ny {
                for i in 0..g.nx {
                    if j < hy || j >= g.ny - hy {
                        assert_eq!(out.get(i, j), f.get(i, j));
                    } else {
                        assert!((out.get(i, j) - oracle(&f, &k, i, j)).abs() < 1e-14);
                    }
                }
            }
        }
    }

    #[test]
    fn oversized_kernel_rejected() {
        let f = StaggeredField::zeros(Kind::H, grid(8, 8));
        assert!(matches!(mollify(&f, &kernel_c8()), Err(Error::KernelTooLarge { .. })));
    }

    #[test]
    fn nyquist_mode_damped() {
        let g = grid(16, 12);
        let f = StaggeredField::from_index_fn(Kind::H, g, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let k = kernel_c4();
        let once = mollify(&f, &k).unwrap();
        let twice = mollify(&once, &k).unwrap();
        for j in 2..g.ny - 2 {
            for i in 0..g.nx {
                assert!(once.get(i, j).abs() < 1.0);
                assert!(twice.get(i, j).abs() < once.get(i, j).abs());
            }
        }
    }

    #[test]
    fn subsample_examples() {
        let g = grid(16, 16);
        let f = StaggeredField::from_index_fn(Kind::H, g, |i, _| i as f64);
        assert_eq!(subsample(&f, 1).unwrap(), f);
        let s = subsample(&f, 4).unwrap();
        assert_eq!((s.grid().nx, s.grid().ny), (4, 4));
        for j in 0..4 {
            for i in 0..4 {
                assert_eq!(s.get(i, j), 4.0 * i as f64);
            }
        }
        assert!(matches!(subsample(&f, 3), Err(Error::NotDivisible { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linear_and_conservative(
            a in proptest::collection::vec(-10.0f64..10.0, 20 * 12),
            b in proptest::collection::vec(-10.0f64..10.0, 20 * 12),
            alpha in -3.0f64..3.0,
            beta in -3.0f64..3.0,
        ) {
            let g = grid(20, 12);
            let fa = StaggeredField::from_values(Kind::H, g, a).unwrap();
            let fb = StaggeredField::from_values(Kind::H, g, b).unwrap();
            let mut combo = fa.scaled(alpha);
            combo.axpy(beta, &fb).unwrap();
            for k in [kernel_c4(), kernel_c8()] {
                let lhs = mollify(&combo, &k).unwrap();
                let mut rhs = mollify(&fa, &k).unwrap().scaled(alpha);
                rhs.axpy(beta, &mollify(&fb, &k).unwrap()).unwrap();
                for (x, y) in lhs.values().iter().zip(rhs.values()) {
                    prop_assert!((x - y).abs() < 1e-11);
                }
                prop_assert!((lhs.sum() - combo.sum()).abs() < 1e-10);
            }
        }

        #[test]
        fn projection_commutes_with_coarse_shift(values in proptest::collection::vec(-1.0f64..1.0, 32 * 16), shift in 0isize..4) {
            let g = grid(32, 16);
            let f = StaggeredField::from_values(Kind::H, g, values).unwrap();
            let spec = CoarseningSpec::new(g, 4, kernel_c4()).unwrap();
            let a = spec.project(&f.roll_east(4 * shift)).unwrap();
            let b = spec.project(&f).unwrap().roll_east(shift);
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

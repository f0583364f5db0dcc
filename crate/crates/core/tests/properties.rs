use std::collections::HashSet;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use pdelearn::dataset::{add_noise, NoiseSpec, NoisyDataset, Preset};
use pdelearn::denoise::ann::{gls_cost, Sample};
use pdelearn::denoise::{fd_bundle, spline_bundle, SurrogateNet};
use pdelearn::grid::{Field, Grid};
use pdelearn::inverse::{nelder_mead, NelderMeadOptions};
use pdelearn::library::{build_library, Library, Subsample, Term, NUM_TERMS};
use pdelearn::metrics::{aggregate_equations, rmse, tpr};
use pdelearn::pdefind::{self, LearnedEquation, Provenance};

fn dataset(grid: &Grid, values: Array2<f64>) -> NoisyDataset {
    let clean = Field::new(grid.clone(), values, "u").unwrap();
    add_noise(&clean, &Preset::FisherKpp.model_spec(), NoiseSpec::proportional(0.0, 0))
}

fn values(m: usize, n: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0..2.0f64, m * n).prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap())
}

fn prov(seed: u64) -> Provenance {
    Provenance {
        method: "test".into(),
        sigma: 0.0,
        seed,
    }
}

fn random_library(m: usize, n: usize, values: Vec<f64>, coeffs: [f64; 3]) -> Library {
    let rows = m * n;
    let theta = Array2::from_shape_fn((rows, NUM_TERMS), |(r, c)| values[(r * NUM_TERMS + c) % values.len()] + (r * c % 7) as f64 * 0.1);
    let target = Array1::from_shape_fn(rows, |r| {
        coeffs[0] * theta[[r, 1]] + coeffs[1] * theta[[r, 3]] + coeffs[2] * theta[[r, 6]]
    });
    Library {
        theta,
        target,
        labels: Term::ALL.iter().map(|t| t.label().to_string()).collect(),
        points: (0..n).flat_map(|j| (0..m).map(move |i| (i, j))).collect(),
    }
}

fn support_strategy() -> impl Strategy<Value = Vec<Term>> {
    prop::sample::subsequence(Term::ALL.to_vec(), 0..=NUM_TERMS)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fd_is_linear(u in values(8, 7), v in values(8, 7), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let grid = Grid::uniform((0.0, 1.0), 8, (0.0, 0.5), 7).unwrap();
        let bu = fd_bundle(&dataset(&grid, u.clone())).unwrap();
        let bv = fd_bundle(&dataset(&grid, v.clone())).unwrap();
        let bw = fd_bundle(&dataset(&grid, &u * a + &v * b)).unwrap();
        for (fw, (fu, fv)) in [(&bw.u_t, (&bu.u_t, &bv.u_t)), (&bw.u_x, (&bu.u_x, &bv.u_x)), (&bw.u_xx, (&bu.u_xx, &bv.u_xx))] {
            for ((w, p), q) in fw.values.iter().zip(fu.values.iter()).zip(fv.values.iter()) {
                let expect = a * p + b * q;
                prop_assert!((w - expect).abs() <= 1e-9 * (1.0 + expect.abs()));
            }
        }
    }

    #[test]
    fn spline_is_translation_equivariant(u in values(13, 12), shift in -5.0..5.0f64) {
        let grid = Grid::uniform((0.0, 1.0), 13, (0.0, 1.0), 12).unwrap();
        let a = spline_bundle(&dataset(&grid, u.clone())).unwrap();
        let b = spline_bundle(&dataset(&grid, u.mapv(|v| v + shift))).unwrap();
        for (p, q) in a.u.values.iter().zip(b.u.values.iter()) {
            prop_assert!((q - p - shift).abs() < 1e-9);
        }
        for (fa, fb) in [(&a.u_t, &b.u_t), (&a.u_x, &b.u_x), (&a.u_xx, &b.u_xx)] {
            for (p, q) in fa.values.iter().zip(fb.values.iter()) {
                prop_assert!((p - q).abs() < 1e-6 * (1.0 + p.abs()));
            }
        }
    }

    #[test]
    fn spline_reproduces_bicubics(c in prop::collection::vec(-1.0..1.0f64, 16)) {
        let grid = Grid::uniform((0.0, 2.0), 14, (0.0, 1.0), 13).unwrap();
        let f = |x: f64, t: f64| {
            let mut s = 0.0;
            for a in 0..4 {
                for b in 0..4 {
                    s += c[4 * a + b] * x.powi(a as i32) * t.powi(b as i32);
                }
            }
            s
        };
        let ux = |x: f64, t: f64| {
            let mut s = 0.0;
            for a in 1..4 {
                for b in 0..4 {
                    s += a as f64 * c[4 * a + b] * x.powi(a as i32 - 1) * t.powi(b as i32);
                }
            }
            s
        };
        let clean = Field::from_fn(&grid, "u", f).unwrap();
        let b = spline_bundle(&dataset(&grid, clean.values.clone())).unwrap();
        for (i, &x) in grid.x().iter().enumerate() {
            for (j, &t) in grid.t().iter().enumerate() {
                prop_assert!((b.u.values[[i, j]] - f(x, t)).abs() < 1e-8);
                prop_assert!((b.u_x.values[[i, j]] - ux(x, t)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn library_products_are_exact(u in values(6, 5)) {
        let grid = Grid::uniform((0.0, 1.0), 6, (0.0, 1.0), 5).unwrap();
        let b = fd_bundle(&dataset(&grid, u)).unwrap();
        let lib = build_library(&b, Subsample::ALL).unwrap();
        prop_assert_eq!(lib.rows(), 30);
        let col = |t: Term| lib.column(t).to_vec();
        let (uu, ux, uxx) = (col(Term::U), col(Term::Ux), col(Term::Uxx));
        for r in 0..lib.rows() {
            prop_assert_eq!(col(Term::One)[r], 1.0);
            prop_assert_eq!(col(Term::UUx)[r], uu[r] * ux[r]);
            prop_assert_eq!(col(Term::U2Uxx)[r], uu[r] * uu[r] * uxx[r]);
            prop_assert_eq!(col(Term::UxUxx)[r], ux[r] * uxx[r]);
            prop_assert_eq!(col(Term::Uxx2)[r], uxx[r] * uxx[r]);
        }
    }

    #[test]
    fn splits_are_tile_atomic_and_deterministic(m in 3usize..23, n in 3usize..23, tile in 1usize..7, seed in any::<u64>()) {
        let lib = random_library(m, n, vec![1.0], [1.0, 0.0, 0.0]);
        let split = pdefind::make_split(&lib, tile, seed);
        prop_assert_eq!(&split, &pdefind::make_split(&lib, tile, seed));
        let key = |r: usize| (lib.points[r].0 / tile, lib.points[r].1 / tile);
        let train: HashSet<_> = split.train_rows.iter().map(|&r| key(r)).collect();
        prop_assert!(split.val_rows.iter().all(|&r| !train.contains(&key(r))));
        let mut all: Vec<usize> = split.train_rows.iter().chain(&split.val_rows).copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..m * n).collect::<Vec<_>>());
    }

    #[test]
    fn pruning_never_adds_terms(
        vals in prop::collection::vec(-1.0..1.0f64, 13..40),
        coeffs in prop::array::uniform3(-2.0..2.0f64),
        support in support_strategy(),
        alpha in 0.0..2.0f64,
        seed in any::<u64>(),
    ) {
        let lib = random_library(10, 10, vals, coeffs);
        let split = pdefind::make_split(&lib, 5, seed);
        let eq = LearnedEquation::fit_support(&lib, &split, &support, &prov(seed));
        let pruned = pdefind::prune(&lib, &split, &eq, alpha);
        let before: HashSet<Term> = eq.terms().into_iter().collect();
        prop_assert!(pruned.terms().iter().all(|t| before.contains(t)));
    }

    #[test]
    fn rmse_is_a_discrepancy(a in values(4, 4), b in values(4, 4)) {
        let grid = Grid::uniform((0.0, 1.0), 4, (0.0, 1.0), 4).unwrap();
        let fa = Field::new(grid.clone(), a.clone(), "a").unwrap();
        let fb = Field::new(grid, b.clone(), "b").unwrap();
        let r = rmse(&fa, &fb).unwrap();
        prop_assert!(r >= 0.0);
        prop_assert_eq!(rmse(&fa, &fa).unwrap(), 0.0);
        prop_assert_eq!(r == 0.0, a == b);
    }

    #[test]
    fn tpr_ignores_relabeling(learned in support_strategy(), truth in support_strategy(), perm in Just(Term::ALL.to_vec()).prop_shuffle()) {
        let relabel = |s: &[Term]| s.iter().map(|t| perm[t.index()]).collect::<Vec<_>>();
        prop_assert_eq!(tpr(&learned, &truth).value(), tpr(&relabel(&learned), &relabel(&truth)).value());
    }

    #[test]
    fn aggregation_ignores_order(
        supports in prop::collection::vec(support_strategy(), 1..12),
        coeff in -3.0..3.0f64,
        order in Just((0..12).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        let eqs: Vec<LearnedEquation> = supports
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut xi = vec![0.0; NUM_TERMS];
                for t in s {
                    xi[t.index()] = coeff + i as f64;
                }
                LearnedEquation::new(xi, 1.0, &prov(i as u64))
            })
            .collect();
        let shuffled: Vec<LearnedEquation> = order.iter().filter(|&&i| i < eqs.len()).map(|&i| eqs[i].clone()).collect();
        let (a, b) = (aggregate_equations(&eqs).unwrap(), aggregate_equations(&shuffled).unwrap());
        prop_assert_eq!(&a.support, &b.support);
        prop_assert_eq!(a.count, b.count);
        for (x, y) in a.mean.iter().zip(&b.mean) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_outputs_make_gamma_irrelevant(b2 in -9e-5..9e-5f64, us in prop::collection::vec(0.0..1.0f64, 1..20)) {
        let net = SurrogateNet { b2, ..SurrogateNet::zeros(3) };
        let samples: Vec<Sample> = us.iter().enumerate().map(|(i, &u)| Sample { x: i as f64 * 0.05, t: 0.5, u }).collect();
        prop_assert_eq!(gls_cost(&net, &samples, 1.0), gls_cost(&net, &samples, 0.0));
    }

    #[test]
    fn simplex_argmin_ignores_constant_offsets(cx in -2.0..2.0f64, cy in -2.0..2.0f64, offset in -100.0..100.0f64) {
        let f = |p: &[f64]| (p[0] - cx).powi(2) + 3.0 * (p[1] - cy).powi(2);
        let opts = NelderMeadOptions::default();
        let a = nelder_mead(f, &[0.5, -0.5], &opts, f64::INFINITY).unwrap();
        let b = nelder_mead(|p: &[f64]| f(p) + offset, &[0.5, -0.5], &opts, f64::INFINITY).unwrap();
        for (x, y) in a.x.iter().zip(&b.x) {
            prop_assert!((x - y).abs() < 1e-5);
        }
    }
}

use morsedisk::config::RunConfig;
use morsedisk::disk::{build_solution, smooth_step, strip_length_from_edge, DiskMap, DiskOptions};
use morsedisk::expr::parse;
use morsedisk::geometry::ModelManifold;
use morsedisk::homology::rank_mod2;
use morsedisk::linearized::{chi_bump, psi_bump};
use morsedisk::moduli::solve;
use morsedisk::numerics::observed_order;
use morsedisk::tree::{enumerate_ribbon_trees, from_text, to_text, RibbonTree};
use proptest::prelude::*;
use std::path::PathBuf;
use std::sync::OnceLock;

fn trees() -> &'static Vec<RibbonTree> {
    static ALL: OnceLock<Vec<RibbonTree>> = OnceLock::new();
    ALL.get_or_init(|| (3..=6).flat_map(|d| enumerate_ribbon_trees(d, false, false).unwrap()).collect())
}

fn floer_disk() -> &'static DiskMap {
    static DISK: OnceLock<DiskMap> = OnceLock::new();
    DISK.get_or_init(|| {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/t1_floer.toml");
        let cfg = RunConfig::load(&path).unwrap();
        let g = solve(&cfg.problem().unwrap(), &[], cfg.grids.seed_resolution).unwrap().remove(0);
        build_solution(&g, cfg.epsilon, &cfg.vertex_moduli_for(&g.problem.tree), &DiskOptions::default()).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn tree_records_survive_text(i in 0usize..1000, seed in proptest::collection::vec(0.0f64..5.0, 4)) {
        let t = &trees()[i % trees().len()];
        let lengths: Vec<f64> = seed.iter().cycle().take(t.internal_edges().len()).copied().collect();
        let (back, ls) = from_text(&to_text(t, Some(&lengths))).unwrap();
        prop_assert_eq!(&back, t);
        prop_assert_eq!(ls.unwrap_or_default(), lengths);
    }

    #[test]
    fn encodings_are_canonical(i in 0usize..1000) {
        let t = &trees()[i % trees().len()];
        let again = RibbonTree::from_encoding(&t.encoding(), false).unwrap();
        prop_assert_eq!(again.canonical().encoding(), t.encoding());
        prop_assert_eq!(again.d(), t.d());
    }

    #[test]
    fn gradients_match_differences(a in -2.0f64..2.0, b in -2.0f64..2.0, s in 0.0f64..1.0, x in 0.0f64..1.0, y in 0.0f64..1.0) {
        let src = format!("{a}*cos(2*pi*(x0-{s})) + {b}*sin(2*pi*x1)*cos(2*pi*x0) + exp(cos(2*pi*x1))");
        let f = parse(&src, 2, &[true, true]).unwrap();
        let g = f.grad(&[x, y]).unwrap();
        let h = 1e-5;
        for (c, e) in [[h, 0.0], [0.0, h]].iter().enumerate() {
            let fd = (f.eval(&[x + e[0], y + e[1]]).unwrap() - f.eval(&[x - e[0], y - e[1]]).unwrap()) / (2.0 * h);
            prop_assert!((g[c] - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {}", g[c], fd);
        }
        let shifted = f.eval(&[x + 3.0, y - 2.0]).unwrap();
        prop_assert!((shifted - f.eval(&[x, y]).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn torus_distance(n in 1usize..4, raw in proptest::collection::vec(-3.0f64..3.0, 6)) {
        let m = ModelManifold::torus(n);
        let (a, b) = (&raw[..n], &raw[3..3 + n]);
        let d = m.dist(a, b);
        prop_assert!((d - m.dist(b, a)).abs() <= 1e-12);
        prop_assert!(d <= (n as f64).sqrt() / 2.0 + 1e-12);
        let w = m.wrapped(a);
        prop_assert_eq!(m.wrapped(&w), w.clone());
        prop_assert!(m.dist(a, &w) <= 1e-12);
    }

    #[test]
    fn rank_over_f2(rows in proptest::collection::vec(proptest::collection::vec(0u8..2, 5), 1..6)) {
        let r = rank_mod2(rows.clone());
        prop_assert!(r <= rows.len().min(5));
        let doubled: Vec<Vec<u8>> = rows.iter().chain(&rows).cloned().collect();
        prop_assert_eq!(rank_mod2(doubled), r);
        let mut reversed = rows.clone();
        reversed.reverse();
        prop_assert_eq!(rank_mod2(reversed), r);
    }

    #[test]
    fn cutoffs_are_monotone_bumps(l in 0.05f64..5.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        prop_assert!((0.0..=1.0).contains(&smooth_step(lo)));
        prop_assert!(smooth_step(lo) <= smooth_step(hi));
        prop_assert!(chi_bump(l, lo * l) >= 0.0);
        prop_assert!(psi_bump(l, lo * l) <= psi_bump(l, hi * l) + 1e-15);
        prop_assert!((psi_bump(l, l) - 1.0).abs() <= 1e-12);
        prop_assert_eq!(psi_bump(l, 0.0), 0.0);
    }

    #[test]
    fn strip_length_is_increasing(r in 0.01f64..2.0, dr in 0.001f64..1.0, eps in 0.02f64..0.25) {
        let a = strip_length_from_edge(r, eps).unwrap();
        let b = strip_length_from_edge(r + dr, eps).unwrap();
        prop_assert!(a < b);
    }

    #[test]
    fn observed_order_of_power_laws(c in 0.1f64..10.0, p in 0.5f64..5.0, h in 1e-3f64..0.5) {
        let e = |h: f64| c * h.powf(p);
        prop_assert!((observed_order(e(h), e(h / 2.0)) - p).abs() <= 1e-9);
    }

    #[test]
    fn config_text_round_trips(eps in 0.01f64..0.25, seed in any::<u64>()) {
        let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/t1_tree4.toml");
        let mut cfg = RunConfig::load(&path).unwrap();
        cfg.epsilon = eps;
        cfg.seed = seed;
        prop_assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perturbations_keep_the_zero_section_boundary(c in proptest::collection::vec(-1.0f64..1.0, 8)) {
        let u = floer_disk();
        let coeffs = |k: usize| -> Vec<Vec<Vec<f64>>> {
            u.strips.iter().map(|_| vec![vec![c[k]], vec![c[k + 1]]]).collect()
        };
        let v = u.perturbed(&coeffs(0), &coeffs(2)).unwrap();
        prop_assert!(v.boundary_p() <= 1e-14);
    }
}

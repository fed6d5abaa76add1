use segregation::kmc::{run_replicas, SimParams};
use segregation::lattice::{Field, TorusGeometry};
use segregation::master::{evolve_distribution, generator_matrix, Distribution, ProductBernoulli};
use segregation::rates::make_preset;

fn kmc_vs_master(case: u8, m: u32, k: f64, replicas: usize) -> f64 {
    // Case 1 with m = 4 reaches three sites ahead, so it needs N >= 4.
    let n = if case == 1 { 4 } else { 3 };
    let geom = TorusGeometry::new(n, 1).unwrap();
    let (c1, c2) = make_preset(case, m, None, 1).unwrap();
    let t = 0.1;
    let (u0, v0) = (vec![0.8, 0.3, 0.5, 0.6], vec![0.4, 0.7, 0.2, 0.1]);
    let (u0, v0) = (u0[..n].to_vec(), v0[..n].to_vec());
    let params = SimParams::new(geom, k, c1, c2, t, 99).unwrap();
    let states =
        run_replicas(&params, &Field::new(u0.clone()), &Field::new(v0.clone()), &[t], replicas, |s| s[0].1.state_index())
            .unwrap();
    let mut probs = vec![0.0; 1 << (2 * n)];
    for s in states {
        probs[s] += 1.0 / replicas as f64;
    }
    let exact = evolve_distribution(
        &generator_matrix(&params).unwrap(),
        &ProductBernoulli::new(u0, v0).unwrap().distribution(),
        t,
    )
    .unwrap();
    Distribution::new(n, probs).unwrap().total_variation(&exact)
}

#[test]
fn kmc_law_matches_master_equation_in_every_case() {
    for (case, m) in [(1, 4), (2, 2), (3, 2)] {
        let tv = kmc_vs_master(case, m, 3.0, 100_000);
        assert!(tv < 0.03, "case {case}: TV {tv}");
    }
}

#[test]
fn pure_exclusion_conserves_both_species() {
    let geom = TorusGeometry::new(3, 1).unwrap();
    let (c1, c2) = make_preset(2, 1, None, 1).unwrap();
    let params = SimParams::new(geom, 0.0, c1, c2, 0.5, 5).unwrap();
    let u0 = Field::new(vec![0.8, 0.3, 0.5]);
    let v0 = Field::new(vec![0.4, 0.7, 0.2]);
    let counts = run_replicas(&params, &u0, &v0, &[0.0, 0.5], 200, |s| {
        s.iter().map(|(_, c)| (c.count1(), c.count2())).collect::<Vec<_>>()
    })
    .unwrap();
    for c in counts {
        assert_eq!(c[0], c[1]);
    }
}

#[test]
fn replica_results_do_not_depend_on_thread_count() {
    let geom = TorusGeometry::new(8, 1).unwrap();
    let (c1, c2) = make_preset(1, 4, None, 1).unwrap();
    let params = SimParams::new(geom, 20.0, c1, c2, 0.05, 17).unwrap();
    let u0 = Field::constant(&geom, 0.5);
    let v0 = Field::constant(&geom, 0.3);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
            run_replicas(&params, &u0, &v0, &[0.05], 16, |s| s[0].1.state_index()).unwrap()
        })
    };
    assert_eq!(run(1), run(4));
}

use bmtd::bloom::HashFamily;
use bmtd::tag::{random_ids, TagId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn chi2_p(counts: &[u64], n: u64) -> f64 {
    let e = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn indices_are_uniform_per_function() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let ids = random_ids(&mut rng, 50_000);
    let fam = HashFamily::new(4, 0xfeed, 97).unwrap();
    for i in 1..=4u16 {
        let mut counts = vec![0u64; 97];
        for id in &ids {
            counts[fam.index(id, i)] += 1;
        }
        let p = chi2_p(&counts, ids.len() as u64);
        assert!(p > 1e-3, "hash function {i}: p={p}");
    }
}

#[test]
fn sequential_ids_spread_evenly() {
    // structured inputs (consecutive serial numbers) must not cluster
    let ids: Vec<TagId> = (0..40_000u64).map(TagId::from_u64).collect();
    let fam = HashFamily::new(1, 3, 64).unwrap();
    let mut counts = vec![0u64; 64];
    for id in &ids {
        counts[fam.index(id, 1)] += 1;
    }
    assert!(chi2_p(&counts, ids.len() as u64) > 1e-3);
}

#[test]
fn pairs_of_functions_are_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let ids = random_ids(&mut rng, 80_000);
    // odd step sizes make pair differences odd under an even range
    let r = 17u32;
    let fam = HashFamily::new(2, 99, r).unwrap();
    let mut counts = vec![0u64; (r * r) as usize];
    for id in &ids {
        let a = fam.index(id, 1);
        let b = fam.index(id, 2);
        counts[a * r as usize + b] += 1;
    }
    assert!(chi2_p(&counts, ids.len() as u64) > 1e-3);
}

#[test]
fn seeds_give_independent_positions() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    let ids = random_ids(&mut rng, 80_000);
    let r = 16u32;
    let f1 = HashFamily::new(1, 1, r).unwrap();
    let f2 = HashFamily::new(1, 2, r).unwrap();
    let mut counts = vec![0u64; (r * r) as usize];
    for id in &ids {
        counts[f1.index(id, 1) * r as usize + f2.index(id, 1)] += 1;
    }
    assert!(chi2_p(&counts, ids.len() as u64) > 1e-3);
}

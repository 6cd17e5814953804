use recauct::distributions::ValueDistribution;
use recauct::equilibrium::*;

fn main() {
    let dist = ValueDistribution::uniform(0.0, 1.0).unwrap();
    let cuts = [0.7218730267315578, 0.3062098256569426, 0.2182358390255984];
    // Reproduce the failing round-trip draw: find (n, delta, k) from the test.
    // The test rng state is opaque; scan plausible combos instead.
    for n in 2..=5u32 {
        for (delta, k) in [(0.95, 0.1), (0.9, 0.05), (0.92, 0.15)] {
            let prims = AuctionPrimitives::new(dist, n, delta, 0.0, k, vec![0.0; 3]).unwrap();
            let thr = ThresholdSequence::new(1.0, &cuts).unwrap();
            let reserves = reserves_from_thresholds(&thr, &prims).unwrap();
            let prims2 = prims.with_reserves(reserves.clone()).unwrap();
            match solve_thresholds(&prims2) {
                Ok(sol) => {
                    let close = sol
                        .thresholds
                        .per_round()
                        .iter()
                        .zip(&cuts)
                        .all(|(a, b)| (a - b).abs() < 1e-6);
                    println!(
                        "n={n} d={delta} k={k}: solved {:?} close={close}",
                        sol.thresholds.per_round()
                    );
                }
                Err(e) => {
                    println!("n={n} d={delta} k={k}: reserves {reserves:?} FAILED {e}");
                    // Dump interim payoffs at the cutoffs to see which
                    // Definition condition binds.
                    for t in 1..=3usize {
                        let v = cuts[t - 1];
                        let pis: Vec<f64> = (1..=3)
                            .map(|tau| interim_payoff(v, tau, &thr, &prims2).unwrap())
                            .collect();
                        println!("  t={t} v={v:.4}: pi = {pis:?}");
                    }
                }
            }
        }
    }
}

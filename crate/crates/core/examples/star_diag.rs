use flowboost_core::geom::{exact_star_discrepancy, PointConfiguration, ProblemInstance, ProblemKind};
use flowboost_core::search::{quasi_newton_polish, srp, PolishSettings, SrpSchedule};
use flowboost_core::surrogate::{star_surrogate, StarSurrogate, StarSurrogateParams};

fn vdc2(mut i: usize) -> f64 {
    let mut r = 0.0;
    let mut f = 0.5;
    while i > 0 {
        r += f * (i % 2) as f64;
        i /= 2;
        f *= 0.5;
    }
    r
}

fn main() {
    let n = 20;
    let inst = ProblemInstance::new(ProblemKind::StarDiscrepancy, 2, n, 1.0).unwrap();
    let mut coords = Vec::new();
    for i in 0..n {
        coords.push((i as f64 + 0.5) / n as f64);
        coords.push(vdc2(i + 1));
    }
    let hammersley = PointConfiguration::new(2, n, coords).unwrap();
    let d0 = exact_star_discrepancy(&hammersley).unwrap();
    println!("hammersley D* = {d0:.5}");

    for (tau, top_k, step) in [(0.01, Some(64), 0.035), (0.01, Some(32), 0.01), (0.005, Some(32), 0.01)] {
        let params = StarSurrogateParams {
            tau_sigmoid: tau,
            top_k,
            ..Default::default()
        };
        let mut surr = StarSurrogate::new(n, params.clone(), true);
        let schedule = SrpSchedule {
            step_size: step,
            ..Default::default()
        };
        let relaxed = srp(&hammersley, &mut surr, &schedule, 3);
        let mut polished =
            quasi_newton_polish(&relaxed, &mut surr, &PolishSettings::default()).unwrap();
        polished.clamp_to_box(0.0, 1.0);
        let d1 = exact_star_discrepancy(&relaxed).unwrap();
        let d2 = exact_star_discrepancy(&polished).unwrap();
        // Surrogate-exact agreement at the end point.
        let mut sp = params.clone();
        sp.grid_x = (0..n).map(|i| polished.coords[2 * i]).chain([1.0]).collect();
        sp.grid_y = (0..n).map(|i| polished.coords[2 * i + 1]).chain([1.0]).collect();
        sp.grid_x.sort_by(|a, b| a.total_cmp(b));
        sp.grid_y.sort_by(|a, b| a.total_cmp(b));
        sp.top_k = None;
        let sv = star_surrogate(&polished, &sp).unwrap().value;
        println!(
            "tau {tau} k {top_k:?} step {step}: srp {d1:.5} polish {d2:.5} surrogate@end {sv:.5}"
        );
    }
    let _ = inst;
}

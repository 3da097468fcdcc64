use kllab::domain::{Hull, Moduli, StandardDomain};
use kllab::verify::locality::locality_experiment;

#[test]
fn locality_power() {
    let disk = Moduli::disk();
    for (label, moduli, hull) in [
        ("disk@0.5", disk.clone(), Hull::radial_spoke(0.5, 0.62)),
        ("disk@0.7", disk.clone(), Hull::radial_spoke(0.7, 0.60)),
        ("disk@0.9", disk.clone(), Hull::radial_spoke(0.9, 0.60)),
        ("disk@1.3", disk.clone(), Hull::radial_spoke(1.3, 0.60)),
    ] {
        for kappa in [6.0, 2.0] {
            let t0 = std::time::Instant::now();
            let domain = StandardDomain::new(moduli.clone()).unwrap();
            match locality_experiment(&domain, Some(&hull), kappa, 400, 7, 0.5) {
                Ok(rep) => {
                    let e = &rep.entries[0];
                    println!(
                        "{label} kappa={kappa}: KS {:.4} crit {:.4} passed {} ({:.1}s) surv {} disc {} / {}",
                        e.measured,
                        e.tolerance,
                        rep.passed,
                        t0.elapsed().as_secs_f64(),
                        rep.parameters["samples"],
                        rep.parameters["stops_direct"],
                        rep.parameters["stops_mapped"],
                    );
                }
                Err(e) => println!("{label} kappa={kappa}: ERR {e}"),
            }
        }
    }
}

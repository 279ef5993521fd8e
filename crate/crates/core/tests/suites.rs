use lfinet_core::suites::{run, Scope};

#[test]
fn every_composite_passes_its_gradient_check() {
    for scope in [Scope::Hfb, Scope::St, Scope::Fgm, Scope::Net] {
        for r in run(scope).unwrap() {
            println!("{r}");
            assert!(r.passed(), "{r} {:?}", r.worst);
        }
    }
}

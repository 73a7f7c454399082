use std::path::Path;

use mimw::{discover, run_case, Case};

#[test]
fn every_case_matches_its_oracle() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../kernels");
    let cases = discover(&dir).unwrap();
    assert!(cases.len() >= 9);
    let mut bad = Vec::new();
    for path in cases {
        let case = Case::load(&path).unwrap();
        let rep = run_case(&case, 0);
        println!("{} err={:.3e} tol={:.0e} races={} {:?} {:?}", rep.name, rep.max_error(), rep.tolerance, rep.races, rep.failure, rep.elapsed);
        if !rep.passed() {
            bad.push(rep.name.clone());
        }
    }
    assert!(bad.is_empty(), "{bad:?}");
}

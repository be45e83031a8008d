mod common;

use bnshare_core::partition::SplitMethod;
use bnshare_federation::harness::{evaluate_cell, Method};

#[test]
fn asia_two_parties_matches_central_union() {
    let gt = common::load("asia");
    let r = evaluate_cell(&gt, &common::cell(SplitMethod::Related, 2, 0.3, 7, 100)).unwrap();
    let d = r.diff_to_cu(Method::Ccbnet).unwrap();
    let dj = r.diff_to_cu(Method::Ccbnetj).unwrap();
    println!("ccbnet {d:e} ccbnetj {dj:e}");
    for rec in r.records().unwrap() {
        println!("{rec:?}");
    }
    assert!(d <= 1e-6 && dj <= 1e-6);
}

//! Verify every backward kernel against central finite differences in the
//! 64-bit instantiation, then corrupt one kernel on purpose to show the
//! check actually bites.

use ldbn::harness::gradcheck::run_gradcheck;

fn main() -> ldbn::Result<()> {
    let report = run_gradcheck(1, 100, None)?;
    print!("{}", report.table());
    assert!(report.all_pass);

    println!("\nwith the batchnorm gradient scaled by 1.01:");
    let corrupted = run_gradcheck(1, 100, Some("batchnorm"))?;
    print!("{}", corrupted.table());
    assert!(!corrupted.all_pass);
    Ok(())
}

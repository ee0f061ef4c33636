//! Every analytic gradient in the crate against central differences.

fn main() -> jpool::Result<()> {
    for r in jpool::gradcheck::suite(0)? {
        println!("{:<16} {:.3e}  {}", r.name, r.max_rel_error, if r.passed() { "ok" } else { "FAIL" });
    }
    Ok(())
}

//! Finite-difference check of every hand-written adjoint.
//!
//! `cargo run --release --example gradcheck [scope] [fault-op]`, where scope
//! is one of numerics, triplane, attention, render, diffusion or all.

use trifield::checks::{gradient_suite, Scope};

fn main() -> trifield::Result<()> {
    let mut args = std::env::args().skip(1);
    let scope = Scope::parse(&args.next().unwrap_or_else(|| "all".into()))?;
    // leaked so the suite can hold it as &'static str
    let fault: Option<&'static str> = args.next().map(|s| &*Box::leak(s.into_boxed_str()));
    let rows = gradient_suite(scope, 0, fault)?;
    for row in &rows {
        println!(
            "{:<40} {:.3e}  tol {:.0e}  {}",
            row.name,
            row.max_rel_error,
            row.tolerance,
            if row.passed() { "ok" } else { "FAILED" }
        );
    }
    let failed = rows.iter().filter(|r| !r.passed()).count();
    println!("{} checks, {failed} failed", rows.len());
    Ok(())
}

use symflow_core::invariants::find_darboux;
use symflow_core::parser::parse_system;

fn main() {
    let sys = parse_system(
        "vars x, y; x' = (1 - x^2 - y^2)*x - y; y' = x + (1 - x^2 - y^2)*y;",
    )
    .unwrap();
    let search = find_darboux(&sys, 2, 2, None).unwrap();
    println!("needs_hint: {}", search.needs_hint);
    for r in &search.results {
        println!("P = {}   q = {}", r.p, r.cofactor);
    }
}
